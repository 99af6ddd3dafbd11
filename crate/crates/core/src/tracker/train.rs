//! PPO training loops with periodic evaluation and best-checkpoint retention.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::TaskSpec;
use super::features::{critic_input_len, policy_input_len};
use super::policy::{Critic, Policy, CRITIC_HIDDEN, POLICY_HIDDEN};
use super::ppo::{fit_critic, ppo_update, PpoHyper, PpoStats};
use super::rollout::{RolloutStats, VecEnv};
use crate::error::{Error, Result};
use crate::eval::{run_scenario, write_text, EvalScenario, ScenarioName};
use crate::motions::{MotionClip, MotionDataset};
use crate::netcore::ParamSet;
use crate::physics::DisturbanceRanges;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub ppo: PpoHyper,
    pub budget_steps: usize,
    /// Evaluate every this many iterations.
    pub eval_every: usize,
    /// Stop once evaluation reaches this success rate (percent).
    pub stop_at_sr: Option<f64>,
    /// Leading iterations that fit only the critic, with the actor frozen.
    pub value_warmup: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoHyper::default(),
            budget_steps: 2_000_000,
            eval_every: 10,
            stop_at_sr: Some(100.0),
            value_warmup: 0,
            policy_hidden: POLICY_HIDDEN.to_vec(),
            critic_hidden: CRITIC_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.policy_hidden.is_empty() || self.critic_hidden.is_empty() {
            return Err(Error::config("networks need at least one hidden layer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub seconds: f64,
    pub mean_reward: f64,
    pub episode_return: f64,
    pub episode_length: f64,
    pub terminations: usize,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub eval_sr: Option<f64>,
    pub extra: Vec<(String, f64)>,
}

impl CurveRow {
    pub fn from_stats(iteration: usize, env_steps: usize, seconds: f64, r: &RolloutStats, p: &PpoStats) -> Self {
        CurveRow {
            iteration,
            env_steps,
            seconds,
            mean_reward: r.mean_reward,
            episode_return: r.mean_episode_return,
            episode_length: r.mean_episode_length,
            terminations: r.terminations,
            episodes: r.episodes,
            policy_loss: p.policy_loss,
            value_loss: p.value_loss,
            entropy: p.entropy,
            approx_kl: p.approx_kl,
            clip_fraction: p.clip_fraction,
            eval_sr: None,
            extra: Vec::new(),
        }
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(
        "iteration,env_steps,seconds,mean_reward,episode_return,episode_length,terminations,episodes,\
         policy_loss,value_loss,entropy,approx_kl,clip_fraction,eval_sr",
    );
    if let Some(first) = rows.first() {
        for (k, _) in &first.extra {
            let _ = write!(s, ",{k}");
        }
    }
    s.push('\n');
    for r in rows {
        let _ = write!(
            s,
            "{},{},{:.2},{:.5},{:.4},{:.2},{},{},{:.6},{:.6},{:.4},{:.6},{:.4},{}",
            r.iteration,
            r.env_steps,
            r.seconds,
            r.mean_reward,
            r.episode_return,
            r.episode_length,
            r.terminations,
            r.episodes,
            r.policy_loss,
            r.value_loss,
            r.entropy,
            r.approx_kl,
            r.clip_fraction,
            r.eval_sr.map(|v| format!("{v:.2}")).unwrap_or_default()
        );
        for (_, v) in &r.extra {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Policy with the best evaluation score seen.
    pub policy: Policy,
    pub critic: Critic,
    pub best_sr: f64,
    pub best_iteration: usize,
    pub env_steps: usize,
    pub curve: Vec<CurveRow>,
}

impl TrainOutcome {
    pub fn to_params(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        self.policy.export(&mut set)?;
        self.critic.export(&mut set)?;
        set.set_meta("best_sr", self.best_sr)?;
        set.set_meta("env_steps", self.env_steps)?;
        Ok(set)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_params()?.save(&dir.join(format!("{stem}.ckpt")))?;
        write_text(&dir.join(format!("{stem}_curve.csv")), &curve_csv(&self.curve))
    }
}

/// Nominal-dynamics success rate of `policy` on `clips`.
pub fn nominal_sr(policy: &Policy, task: &TaskSpec, clips: &[MotionClip]) -> Result<f64> {
    let scenario = EvalScenario::new(
        ScenarioName::NoDisturbance,
        &DisturbanceRanges::none(),
        (0..clips.len()).collect(),
        vec![0],
    );
    Ok(run_scenario(policy, task, clips, &scenario)?.sr)
}

/// PPO on `clips` under `ranges`, starting from `policy` and `critic`.
/// `evaluate` scores a policy; the best-scoring snapshot is returned.
pub fn train_policy(
    task: &TaskSpec,
    clips: Vec<MotionClip>,
    ranges: DisturbanceRanges,
    mut policy: Policy,
    mut critic: Critic,
    config: &TrainConfig,
    evaluate: &dyn Fn(&Policy) -> Result<f64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let hyper = config.ppo;
    let mut envs = VecEnv::new(task.clone(), clips, ranges, hyper.num_envs, 0, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7070));
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut best = (evaluate(&policy)?, 0usize, policy.clone());
    let mut steps = 0;
    let mut iteration = 0;
    log::info!("iteration 0: eval SR {:.1}", best.0);
    while steps < config.budget_steps && !config.stop_at_sr.is_some_and(|t| best.0 >= t) {
        iteration += 1;
        let (batch, rstats) = envs.collect(&policy, &critic, &hyper, None)?;
        steps += batch.len();
        let pstats = if iteration <= config.value_warmup {
            PpoStats {
                value_loss: fit_critic(&mut critic, &batch, &hyper, &mut rng)?,
                ..Default::default()
            }
        } else {
            ppo_update(&mut policy, Some(&mut critic), &batch, &hyper, &mut rng)?
        };
        let mut row = CurveRow::from_stats(iteration, steps, start.elapsed().as_secs_f64(), &rstats, &pstats);
        if iteration % config.eval_every == 0 || steps >= config.budget_steps {
            let sr = evaluate(&policy)?;
            row.eval_sr = Some(sr);
            if sr > best.0 || (sr == best.0 && sr > 0.0) {
                best = (sr, iteration, policy.clone());
            }
            log::info!(
                "iteration {iteration}: {steps} steps, reward {:.3}, episode length {:.1}, eval SR {sr:.1}",
                rstats.mean_reward,
                rstats.mean_episode_length
            );
        }
        curve.push(row);
    }
    Ok(TrainOutcome {
        policy: best.2,
        critic,
        best_sr: best.0,
        best_iteration: best.1,
        env_steps: steps,
        curve,
    })
}

/// Fresh networks sized for `task`.
pub fn fresh_networks(task: &TaskSpec, config: &TrainConfig) -> (Policy, Critic) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nj = task.model.num_joints();
    let policy = Policy::new(policy_input_len(&task.model), &config.policy_hidden, nj, config.ppo.lr, &mut rng);
    let critic = Critic::new(critic_input_len(&task.model), &config.critic_hidden, config.ppo.critic_lr, &mut rng);
    (policy, critic)
}

/// Trains a specialist on one cluster without any dynamics randomization.
pub fn train_specialist(
    task: &TaskSpec,
    cluster: usize,
    dataset: &MotionDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let clips: Vec<MotionClip> = dataset
        .cluster_clips(cluster)
        .into_iter()
        .map(|i| dataset.clips[i].clone())
        .collect();
    if clips.is_empty() {
        return Err(Error::config(format!("cluster {cluster} is empty")));
    }
    let (policy, critic) = fresh_networks(task, config);
    let eval_clips = clips.clone();
    let eval = move |p: &Policy| nominal_sr(p, task, &eval_clips);
    let cfg = TrainConfig {
        seed: config.seed ^ (cluster as u64).wrapping_mul(0x9e37_79b9),
        ..config.clone()
    };
    train_policy(task, clips, DisturbanceRanges::none(), policy, critic, &cfg, &eval)
}
