use serde::{Deserialize, Serialize};

use super::metrics::{mpjpe, mpjve, success, LinkTrajectory, StepError};
use crate::error::{Error, Result};
use crate::motions::MotionClip;
use crate::physics::{sample_dynamics_config, DisturbanceRanges, DynamicsConfig};
use crate::tracker::ppo::Actor;
use crate::tracker::{env_rng, mean_link_error, TaskSpec, TrackEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    NoDisturbance,
    Terrains,
    ExternalForces,
    PhysicalPropertyChanges,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::NoDisturbance,
        ScenarioName::Terrains,
        ScenarioName::ExternalForces,
        ScenarioName::PhysicalPropertyChanges,
    ];

    pub const DISTURBED: [ScenarioName; 3] = [
        ScenarioName::Terrains,
        ScenarioName::ExternalForces,
        ScenarioName::PhysicalPropertyChanges,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioName::NoDisturbance => "no_disturbance",
            ScenarioName::Terrains => "terrains",
            ScenarioName::ExternalForces => "external_forces",
            ScenarioName::PhysicalPropertyChanges => "physical_property_changes",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario '{s}'")))
    }

    /// `base` with only this scenario's family switched on.
    pub fn ranges(self, base: &DisturbanceRanges) -> DisturbanceRanges {
        let (t, f, p) = match self {
            ScenarioName::NoDisturbance => (false, false, false),
            ScenarioName::Terrains => (true, false, false),
            ScenarioName::ExternalForces => (false, true, false),
            ScenarioName::PhysicalPropertyChanges => (false, false, true),
        };
        DisturbanceRanges {
            terrain_enabled: t,
            forces_enabled: f,
            physical_enabled: p,
            ..base.clone()
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScenario {
    pub name: ScenarioName,
    pub ranges: DisturbanceRanges,
    pub clips: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl EvalScenario {
    pub fn new(name: ScenarioName, base: &DisturbanceRanges, clips: Vec<usize>, seeds: Vec<u64>) -> Self {
        EvalScenario {
            name,
            ranges: name.ranges(base),
            clips,
            seeds,
        }
    }

    pub fn validate(&self, num_clips: usize) -> Result<()> {
        self.ranges.validate()?;
        if self.ranges != self.name.ranges(&self.ranges) {
            return Err(Error::config(format!(
                "scenario {} enables a disturbance family other than its own",
                self.name
            )));
        }
        if self.clips.is_empty() || self.seeds.is_empty() {
            return Err(Error::config(format!("scenario {} has no clips or seeds", self.name)));
        }
        if let Some(c) = self.clips.iter().find(|&&c| c >= num_clips) {
            return Err(Error::config(format!("scenario {} names clip {c} of {num_clips}", self.name)));
        }
        Ok(())
    }

    /// Dynamics for one (clip, seed) pair.
    pub fn config(&self, clip: usize, seed: u64, num_joints: usize) -> Result<DynamicsConfig> {
        if !self.ranges.any_enabled() {
            return Ok(DynamicsConfig::nominal(num_joints));
        }
        let mut rng = env_rng(seed, clip as u64);
        sample_dynamics_config(&mut rng, &self.ranges, num_joints)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub clip: usize,
    pub seed: u64,
    pub steps: usize,
    pub terminated: bool,
    pub success: bool,
    pub errors: Vec<StepError>,
    pub executed: LinkTrajectory,
    pub reference: LinkTrajectory,
    pub total_reward: f64,
}

/// Deterministic rollout of the mean action from the first frame of `clip`.
pub fn run_episode<A: Actor>(
    actor: &A,
    task: &TaskSpec,
    clips: &[MotionClip],
    clip: usize,
    config: DynamicsConfig,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let refs: Vec<&MotionClip> = clips.iter().collect();
    let mut env = TrackEnv::start(task, &refs, clip, 0, config, actor.history_len(), seed)?;
    let c = &clips[clip];
    let mut out = EpisodeOutcome {
        clip,
        seed,
        steps: 0,
        terminated: false,
        success: false,
        errors: Vec::new(),
        executed: Vec::new(),
        reference: Vec::new(),
        total_reward: 0.0,
    };
    let mut base = Vec::new();
    loop {
        base.clear();
        let goal = env.next_goal(c)?;
        env.policy_input(task, &goal, &mut base);
        let x = actor.augment(base.clone(), base.len(), std::slice::from_ref(&env))?;
        let mean = actor.means(&x, 1)?;
        let action: Vec<f64> = mean.iter().map(|&v| v as f64).collect();
        let info = env.step(task, c, &action)?;
        out.steps += 1;
        out.total_reward += info.reward.total;
        out.errors.push(StepError {
            mean_link: mean_link_error(&info.measured, &info.goal),
            height: info.measured.base_height - info.goal.base_height,
        });
        out.executed.push(info.measured.link_pos.clone());
        out.reference.push(info.goal.link_pos.clone());
        if info.done() {
            out.terminated = info.terminated;
            break;
        }
    }
    out.success = success(&out.errors, out.terminated);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: usize,
    pub kind: String,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub mpjpe_mm: Option<f64>,
    pub mpjve_mm_per_frame: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub episodes: usize,
    pub successes: usize,
    /// Percentage of episodes tracked to the end.
    pub sr: f64,
    /// Averaged over successful episodes only.
    pub mpjpe_mm: Option<f64>,
    pub mpjve_mm_per_frame: Option<f64>,
    pub seeds: usize,
    pub per_clip: Vec<ClipMetrics>,
}

fn mean_of(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Every (clip, seed) pair of `scenario`, merged in a fixed order.
pub fn run_scenario<A: Actor>(
    actor: &A,
    task: &TaskSpec,
    clips: &[MotionClip],
    scenario: &EvalScenario,
) -> Result<MetricsReport> {
    scenario.validate(clips.len())?;
    let nj = task.model.num_joints();
    let (mut all_p, mut all_v) = (Vec::new(), Vec::new());
    let mut per_clip = Vec::new();
    let mut successes = 0;
    for &clip in &scenario.clips {
        let (mut cp, mut cv, mut cs) = (Vec::new(), Vec::new(), 0);
        for &seed in &scenario.seeds {
            let config = scenario.config(clip, seed, nj)?;
            let ep = run_episode(actor, task, clips, clip, config, seed)?;
            if ep.success {
                cs += 1;
                cp.push(mpjpe(&ep.executed, &ep.reference)?);
                if ep.executed.len() >= 2 {
                    cv.push(mpjve(&ep.executed, &ep.reference)?);
                }
            }
        }
        successes += cs;
        let n = scenario.seeds.len();
        per_clip.push(ClipMetrics {
            clip,
            kind: clips[clip].kind().name().to_string(),
            episodes: n,
            successes: cs,
            sr: 100.0 * cs as f64 / n as f64,
            mpjpe_mm: mean_of(&cp),
            mpjve_mm_per_frame: mean_of(&cv),
        });
        all_p.extend(cp);
        all_v.extend(cv);
    }
    let episodes = scenario.clips.len() * scenario.seeds.len();
    Ok(MetricsReport {
        scenario: scenario.name.name().to_string(),
        episodes,
        successes,
        sr: 100.0 * successes as f64 / episodes as f64,
        mpjpe_mm: mean_of(&all_p),
        mpjve_mm_per_frame: mean_of(&all_v),
        seeds: scenario.seeds.len(),
        per_clip,
    })
}
