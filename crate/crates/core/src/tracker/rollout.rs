//! Batched experience collection over many tracking environments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{env_rng, StepInfo, TaskSpec, TrackEnv};
use super::features::{critic_input_len, policy_input_len};
use super::policy::Critic;
use super::ppo::{Actor, PpoHyper, RolloutBatch};
use super::reward::TERM_NAMES;
use crate::error::{Error, Result};
use crate::motions::MotionClip;
use crate::netcore::{gaussian_log_prob, gaussian_sample};
use crate::physics::DisturbanceRanges;

/// Receives every transition as `(env, proprio, squashed action, done)`.
pub type StepHook<'a> = dyn FnMut(usize, &[f32], &[f32], bool) + 'a;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutStats {
    pub steps: usize,
    pub episodes: usize,
    pub terminations: usize,
    pub truncations: usize,
    pub divergences: usize,
    pub disturbed_resets: usize,
    pub mean_reward: f64,
    pub mean_episode_return: f64,
    pub mean_episode_length: f64,
    pub term_means: Vec<f64>,
}

/// A fixed set of environments that reset themselves on episode end.
pub struct VecEnv {
    pub task: TaskSpec,
    pub clips: Vec<MotionClip>,
    pub ranges: DisturbanceRanges,
    pub random_start: bool,
    pub history_len: usize,
    pub envs: Vec<TrackEnv>,
    rngs: Vec<ChaCha8Rng>,
    sampler: ChaCha8Rng,
    next_episode: u64,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl VecEnv {
    pub fn new(
        task: TaskSpec,
        clips: Vec<MotionClip>,
        ranges: DisturbanceRanges,
        num_envs: usize,
        history_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::config("no clips to train on"));
        }
        ranges.validate()?;
        let mut v = VecEnv {
            task,
            clips,
            ranges,
            random_start: true,
            history_len,
            envs: Vec::with_capacity(num_envs),
            rngs: (0..num_envs as u64).map(|i| env_rng(seed, i)).collect(),
            sampler: ChaCha8Rng::seed_from_u64(seed ^ 0x5a4d_504c_4552),
            next_episode: 0,
            returns: vec![0.0; num_envs],
            lengths: vec![0; num_envs],
        };
        for i in 0..num_envs {
            let env = v.fresh(i)?;
            v.envs.push(env);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    fn fresh(&mut self, i: usize) -> Result<TrackEnv> {
        let refs: Vec<&MotionClip> = self.clips.iter().collect();
        let ep = self.next_episode;
        self.next_episode += 1;
        TrackEnv::random(
            &self.task,
            &refs,
            &self.ranges,
            self.random_start,
            self.history_len,
            ep,
            &mut self.rngs[i],
        )
    }

    /// Switches between random and first-frame starts and resets every environment.
    pub fn set_random_start(&mut self, random: bool) -> Result<()> {
        self.random_start = random;
        for i in 0..self.len() {
            self.envs[i] = self.fresh(i)?;
            self.returns[i] = 0.0;
            self.lengths[i] = 0;
        }
        Ok(())
    }

    pub fn policy_dim(&self) -> usize {
        policy_input_len(&self.task.model)
    }

    pub fn critic_dim(&self) -> usize {
        critic_input_len(&self.task.model)
    }

    /// Policy and critic inputs for every environment at its current step.
    pub fn inputs(&self, with_critic: bool) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut p = Vec::with_capacity(self.len() * self.policy_dim());
        let mut c = Vec::with_capacity(if with_critic { self.len() * self.critic_dim() } else { 0 });
        for env in &self.envs {
            let clip = &self.clips[env.clip];
            let goal = env.next_goal(clip)?;
            env.policy_input(&self.task, &goal, &mut p);
            if with_critic {
                env.critic_input(&self.task, &goal, &mut c);
            }
        }
        Ok((p, c))
    }

    /// Steps every environment with its row of `actions` and resets finished ones.
    /// Returns whether each environment ended an episode.
    pub fn step_all(&mut self, actions: &[f32]) -> Result<Vec<bool>> {
        let n = self.len();
        if n == 0 || !actions.len().is_multiple_of(n) {
            return Err(Error::shape("one action row per environment is required"));
        }
        let ad = actions.len() / n;
        let mut dones = Vec::with_capacity(n);
        for i in 0..n {
            let a: Vec<f64> = actions[i * ad..(i + 1) * ad].iter().map(|&v| v as f64).collect();
            let info = self.step_env(i, &a)?;
            if info.done() {
                self.envs[i] = self.fresh(i)?;
            }
            dones.push(info.done());
        }
        Ok(dones)
    }

    fn step_env(&mut self, i: usize, action: &[f64]) -> Result<StepInfo> {
        let clip = &self.clips[self.envs[i].clip];
        self.envs[i].step(&self.task, clip, action)
    }

    /// `horizon` steps from every environment with sampled actions.
    pub fn collect<A: Actor>(
        &mut self,
        actor: &A,
        critic: &Critic,
        hyper: &PpoHyper,
        mut hook: Option<&mut StepHook<'_>>,
    ) -> Result<(RolloutBatch, RolloutStats)> {
        let e_len = self.len();
        let ad = actor.action_dim();
        let pd = self.policy_dim();
        let mut batch = RolloutBatch::new(e_len, actor.input_dim(), self.critic_dim(), ad);
        let mut stats = RolloutStats {
            term_means: vec![0.0; TERM_NAMES.len()],
            ..Default::default()
        };
        let (mut ep_ret, mut ep_len) = (0.0, 0usize);
        for _ in 0..hyper.horizon {
            let (p, c) = self.inputs(true)?;
            let x = actor.augment(p, pd, &self.envs)?;
            let means = actor.means(&x, e_len)?;
            let values = critic.values(&c, e_len)?;
            batch.actor_inputs.extend_from_slice(&x);
            batch.critic_inputs.extend_from_slice(&c);
            batch.values.extend_from_slice(&values);
            for i in 0..e_len {
                let mu = &means[i * ad..(i + 1) * ad];
                let a = gaussian_sample(mu, actor.log_std(), &mut self.sampler);
                batch.log_probs.push(gaussian_log_prob(mu, actor.log_std(), &a));
                let action: Vec<f64> = a.iter().map(|&v| v as f64).collect();
                let proprio = if hook.is_some() { self.envs[i].proprio(&self.task) } else { Vec::new() };
                let info = self.step_env(i, &action)?;
                if let Some(h) = hook.as_deref_mut() {
                    let squashed: Vec<f32> = action.iter().map(|v| v.tanh() as f32).collect();
                    h(i, &proprio, &squashed, info.done());
                }
                batch.actions.extend_from_slice(&a);
                let mut r = info.reward.total * hyper.reward_scale;
                stats.mean_reward += info.reward.total;
                for (m, t) in stats.term_means.iter_mut().zip(info.reward.terms.iter()) {
                    *m += t;
                }
                self.returns[i] += info.reward.total;
                self.lengths[i] += 1;
                if info.truncated {
                    let ci = self.critic_single(i)?;
                    let v = critic.values(&ci, 1)?[0] as f64;
                    r += hyper.gamma * v;
                }
                batch.rewards.push(r as f32);
                batch.dones.push(info.done());
                batch.terminated.push(info.terminated);
                stats.steps += 1;
                if info.done() {
                    stats.episodes += 1;
                    stats.terminations += info.terminated as usize;
                    stats.truncations += info.truncated as usize;
                    stats.divergences += info.diverged as usize;
                    ep_ret += self.returns[i];
                    ep_len += self.lengths[i];
                    self.returns[i] = 0.0;
                    self.lengths[i] = 0;
                    self.envs[i] = self.fresh(i)?;
                    if !self.envs[i].config.is_nominal() {
                        stats.disturbed_resets += 1;
                    }
                }
            }
            batch.steps += 1;
        }
        let (_, c) = self.inputs(true)?;
        batch.bootstrap = critic.values(&c, e_len)?;
        let n = stats.steps.max(1) as f64;
        stats.mean_reward /= n;
        stats.term_means.iter_mut().for_each(|m| *m /= n);
        if stats.episodes > 0 {
            stats.mean_episode_return = ep_ret / stats.episodes as f64;
            stats.mean_episode_length = ep_len as f64 / stats.episodes as f64;
        }
        batch.compute_advantages(hyper.gamma, hyper.lambda)?;
        Ok((batch, stats))
    }

    fn critic_single(&self, i: usize) -> Result<Vec<f32>> {
        let env = &self.envs[i];
        let clip = &self.clips[env.clip];
        let goal = env.next_goal(clip)?;
        let mut c = Vec::new();
        env.critic_input(&self.task, &goal, &mut c);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motions::{generate_clip, MotionKind, MotionParams};
    use crate::physics::RobotModel;
    use crate::tracker::policy::{Critic, Policy};

    fn setup(ranges: DisturbanceRanges) -> (VecEnv, Policy, Critic) {
        let task = TaskSpec::new(RobotModel::planar_biped());
        let clip = generate_clip(&task.model, MotionKind::Stand, &MotionParams::zero(), 2.0, 50.0, 0).unwrap();
        let v = VecEnv::new(task, vec![clip], ranges, 4, 0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Policy::new(v.policy_dim(), &[16], 6, 1e-3, &mut rng);
        let c = Critic::new(v.critic_dim(), &[16], 1e-3, &mut rng);
        (v, p, c)
    }

    #[test]
    fn zero_horizon_is_empty() {
        let (mut v, p, c) = setup(DisturbanceRanges::none());
        let h = PpoHyper {
            horizon: 0,
            ..Default::default()
        };
        let (b, s) = v.collect(&p, &c, &h, None).unwrap();
        assert!(b.is_empty());
        assert_eq!(s.steps, 0);
    }

    #[test]
    fn nominal_batches_stay_nominal() {
        let (mut v, p, c) = setup(DisturbanceRanges::none());
        let h = PpoHyper {
            horizon: 120,
            ..Default::default()
        };
        let (b, s) = v.collect(&p, &c, &h, None).unwrap();
        b.check().unwrap();
        assert_eq!(b.len(), 480);
        assert_eq!(s.disturbed_resets, 0);
        assert!(v.envs.iter().all(|e| e.config.is_nominal()));
    }
}
