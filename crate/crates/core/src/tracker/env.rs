//! A single tracking episode on the simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::{critic_input, policy_input, proprio_features};
use super::reward::{
    canonicalize_action, check_termination, compute_reward, measure, Reward, RewardInputs,
    RewardSigmas, RewardWeights,
};
use crate::adapt::HistoryBuffer;
use crate::error::{Error, Result};
use crate::motions::{clip_goal, MotionClip, MotionFrame};
use crate::physics::{
    control_step, fractal_terrain, sample_dynamics_config, DisturbanceRanges, DynamicsConfig,
    Kinematics, RobotModel, SimState, Terrain, World, CONTROL_DECIMATION, SIM_DT,
};

pub const CONTROL_DT: f64 = SIM_DT * CONTROL_DECIMATION as f64;

/// Read-only task description shared by every environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub model: RobotModel,
    pub weights: RewardWeights,
    pub sigmas: RewardSigmas,
}

impl TaskSpec {
    pub fn new(model: RobotModel) -> Self {
        TaskSpec {
            model,
            weights: RewardWeights::default(),
            sigmas: RewardSigmas::default(),
        }
    }
}

/// Builds the terrain a dynamics configuration describes.
pub fn terrain_for(config: &DynamicsConfig) -> Result<Terrain> {
    let t = if config.terrain.max_height > 0.0 {
        fractal_terrain(&config.terrain, config.terrain.seed)?
    } else {
        Terrain::flat(1.0)
    };
    Ok(t.with_friction(config.floor_friction))
}

/// Robot state matching a reference frame, resting on `terrain`.
pub fn state_from_frame(model: &RobotModel, frame: &MotionFrame, terrain: &Terrain) -> SimState {
    let mut state = SimState {
        base_pos: [0.0, frame.base_height],
        base_pitch: frame.pitch,
        base_vel: frame.base_vel,
        base_pitch_rate: frame.pitch_rate,
        q: frame.q.clone(),
        qdot: frame.qdot.clone(),
        time: 0.0,
        last_action: vec![0.0; model.num_joints()],
    };
    let kin = Kinematics::new(model, &state);
    let lift = model
        .contacts
        .iter()
        .map(|c| {
            let p = kin.point(c.link, c.offset);
            terrain.height(p[0]) - p[1]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if lift.is_finite() {
        state.base_pos[1] += lift;
    }
    state
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub reward: Reward,
    pub terminated: bool,
    pub truncated: bool,
    pub diverged: bool,
    pub measured: MotionFrame,
    pub goal: MotionFrame,
}

impl StepInfo {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone)]
pub struct TrackEnv {
    pub clip: usize,
    pub start_frame: usize,
    pub steps: usize,
    pub state: SimState,
    pub config: DynamicsConfig,
    pub terrain: Terrain,
    pub prev_qdot: Vec<f64>,
    pub history: HistoryBuffer,
    pub episode: u64,
}

impl TrackEnv {
    /// Starts an episode on `clip` at `start_frame` with the given dynamics.
    pub fn start(
        task: &TaskSpec,
        clips: &[&MotionClip],
        clip: usize,
        start_frame: usize,
        config: DynamicsConfig,
        history_len: usize,
        episode: u64,
    ) -> Result<Self> {
        let c = clips
            .get(clip)
            .ok_or_else(|| Error::config(format!("clip {clip} out of range")))?;
        if start_frame + 1 >= c.frames.len() {
            return Err(Error::domain("start frame leaves no step to take"));
        }
        let terrain = terrain_for(&config)?;
        let state = state_from_frame(&task.model, &c.frames[start_frame], &terrain);
        let nj = task.model.num_joints();
        Ok(TrackEnv {
            clip,
            start_frame,
            steps: 0,
            prev_qdot: state.qdot.clone(),
            state,
            config,
            terrain,
            history: HistoryBuffer::new(history_len, super::features::proprio_len(&task.model), nj),
            episode,
        })
    }

    /// Random clip, random start phase and, when enabled, random dynamics.
    pub fn random(
        task: &TaskSpec,
        clips: &[&MotionClip],
        ranges: &DisturbanceRanges,
        random_start: bool,
        history_len: usize,
        episode: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::config("no clips to track"));
        }
        let clip = rng.gen_range(0..clips.len());
        let start = if random_start {
            rng.gen_range(0..clips[clip].frames.len() - 1)
        } else {
            0
        };
        let config = if ranges.any_enabled() {
            sample_dynamics_config(rng, ranges, task.model.num_joints())?
        } else {
            DynamicsConfig::nominal(task.model.num_joints())
        };
        Self::start(task, clips, clip, start, config, history_len, episode)
    }

    fn clip_time(&self, clip: &MotionClip, steps: usize) -> f64 {
        self.start_frame as f64 / clip.fps + steps as f64 * CONTROL_DT
    }

    /// Reference frame the next action aims at.
    pub fn next_goal(&self, clip: &MotionClip) -> Result<MotionFrame> {
        Ok(clip_goal(clip, self.clip_time(clip, self.steps + 1))?.frame)
    }

    pub fn policy_input(&self, task: &TaskSpec, goal: &MotionFrame, out: &mut Vec<f32>) {
        policy_input(&task.model, &self.state, goal, out);
    }

    pub fn critic_input(&self, task: &TaskSpec, goal: &MotionFrame, out: &mut Vec<f32>) {
        let measured = measure(&task.model, &self.state, &self.terrain);
        critic_input(&task.model, &self.state, goal, &measured, &self.config, &self.terrain, out);
    }

    pub fn proprio(&self, task: &TaskSpec) -> Vec<f32> {
        let mut v = Vec::new();
        proprio_features(&task.model, &self.state, &mut v);
        v
    }

    /// Applies one policy output for one control period.
    pub fn step(&mut self, task: &TaskSpec, clip: &MotionClip, action: &[f64]) -> Result<StepInfo> {
        let model = &task.model;
        let goal = self.next_goal(clip)?;
        let squashed: Vec<f64> = action.iter().map(|a| a.tanh()).collect();
        let targets = canonicalize_action(action, &goal.q, &model.action_scale);
        if self.history.capacity() > 0 {
            let s = self.proprio(task);
            let a: Vec<f32> = squashed.iter().map(|&v| v as f32).collect();
            self.history.push(&s, &a)?;
        }
        let world = World::new(model, &self.terrain, &self.config);
        let prev_action = self.state.last_action.clone();
        let (next, torques, diverged) =
            match control_step(&self.state, &targets, &world, SIM_DT, CONTROL_DECIMATION) {
                Ok(out) => (out.state, out.torques, false),
                Err(Error::SimulationDiverged { .. }) => {
                    log::debug!("simulation diverged on clip {}", self.clip);
                    (self.state.clone(), vec![0.0; model.num_joints()], true)
                }
                Err(e) => return Err(e),
            };
        self.state = next;
        self.state.last_action = squashed.clone();
        self.steps += 1;
        let measured = measure(model, &self.state, &self.terrain);
        let terminated = diverged || check_termination(&measured, &goal);
        let reward = compute_reward(
            model,
            &task.weights,
            &task.sigmas,
            RewardInputs {
                measured: &measured,
                goal: &goal,
                action: &squashed,
                prev_action: &prev_action,
                qdot_prev: &self.prev_qdot,
                torques: &torques,
                terminated,
            },
        );
        self.prev_qdot = self.state.qdot.clone();
        let end = self.start_frame + (self.steps as f64 * CONTROL_DT * clip.fps).round() as usize;
        let truncated = !terminated && end + 1 >= clip.frames.len();
        Ok(StepInfo {
            reward,
            terminated,
            truncated,
            diverged,
            measured,
            goal,
        })
    }
}

/// Per-environment RNG derived from a master seed.
pub fn env_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}
