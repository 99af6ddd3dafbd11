//! Clipped-surrogate PPO with an asymmetric critic.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad};

use super::env::TrackEnv;
use super::policy::Critic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub critic_lr: f64,
    pub horizon: usize,
    pub num_envs: usize,
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    /// Stops the epoch loop early once the approximate KL passes this value.
    pub target_kl: Option<f64>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 1024,
            value_coef: 0.5,
            entropy_coef: 0.005,
            lr: 3e-4,
            critic_lr: 1e-3,
            horizon: 64,
            num_envs: 64,
            reward_scale: 0.01,
            max_grad_norm: 1.0,
            target_kl: Some(0.05),
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.gamma) {
            return Err(Error::config(format!("ppo.gamma = {} must lie in (0, 1]", self.gamma)));
        }
        if !unit(self.lambda) {
            return Err(Error::config(format!("ppo.lambda = {} must lie in (0, 1]", self.lambda)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("ppo.clip must be positive"));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.horizon == 0 || self.num_envs == 0 {
            return Err(Error::config("ppo epochs, minibatch, horizon and num_envs must be positive"));
        }
        if !(self.lr > 0.0 && self.critic_lr > 0.0 && self.reward_scale > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::config("ppo learning rates, reward_scale and max_grad_norm must be positive"));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::config("ppo coefficients must be non-negative"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.horizon * self.num_envs
    }
}

/// Backward GAE over one sequence; `dones[t]` cuts bootstrapping after step `t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit variance in place; a constant vector becomes zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-8 { (*a - mean) / std } else { 0.0 };
    }
}

/// Transitions stored step-major: index `t * envs + e`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub steps: usize,
    pub envs: usize,
    pub actor_dim: usize,
    pub critic_dim: usize,
    pub action_dim: usize,
    pub actor_inputs: Vec<f32>,
    pub critic_inputs: Vec<f32>,
    /// Pre-squash samples.
    pub actions: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    /// Scaled rewards, with the bootstrap folded in on truncation.
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub terminated: Vec<bool>,
    pub bootstrap: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

impl RolloutBatch {
    pub fn new(envs: usize, actor_dim: usize, critic_dim: usize, action_dim: usize) -> Self {
        RolloutBatch {
            envs,
            actor_dim,
            critic_dim,
            action_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.steps * self.envs;
        let ok = self.actor_inputs.len() == n * self.actor_dim
            && self.critic_inputs.len() == n * self.critic_dim
            && self.actions.len() == n * self.action_dim
            && self.log_probs.len() == n
            && self.values.len() == n
            && self.rewards.len() == n
            && self.dones.len() == n
            && self.terminated.len() == n
            && self.bootstrap.len() == self.envs;
        if ok {
            Ok(())
        } else {
            Err(Error::shape("rollout batch fields have inconsistent lengths"))
        }
    }

    /// Fills `advantages` (normalized) and `returns` per environment.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        self.check()?;
        let (t_len, e_len) = (self.steps, self.envs);
        let n = t_len * e_len;
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        let mut r = vec![0.0; t_len];
        let mut v = vec![0.0; t_len];
        let mut d = vec![false; t_len];
        for e in 0..e_len {
            for t in 0..t_len {
                let i = t * e_len + e;
                r[t] = self.rewards[i] as f64;
                v[t] = self.values[i] as f64;
                d[t] = self.dones[i];
            }
            let (a, g) = gae(&r, &v, &d, self.bootstrap[e] as f64, gamma, lambda);
            for t in 0..t_len {
                adv[t * e_len + e] = a[t];
                ret[t * e_len + e] = g[t];
            }
        }
        normalize_advantages(&mut adv);
        self.advantages = adv.iter().map(|&a| a as f32).collect();
        self.returns = ret.iter().map(|&g| g as f32).collect();
        Ok(())
    }

    pub fn gather(src: &[f32], dim: usize, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        out
    }
}

/// A trainable stochastic policy with a state-independent log-std.
pub trait Actor {
    type Cache;
    type Grad;

    fn input_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn log_std(&self) -> &[f32];
    fn means(&self, x: &[f32], batch: usize) -> Result<Vec<f32>>;
    fn forward_train(&self, x: &[f32], batch: usize) -> Result<(Vec<f32>, Self::Cache)>;
    fn backward(&self, cache: &Self::Cache, d_mean: &[f32]) -> Result<Self::Grad>;
    /// Applies `grad` and `d_log_std` (both loss gradients); returns the pre-clip norm.
    fn update(&mut self, grad: Self::Grad, d_log_std: Vec<f32>, max_grad_norm: f64) -> Result<f64>;

    /// Length of the state-action history the actor consumes.
    fn history_len(&self) -> usize {
        0
    }

    /// Turns per-environment policy inputs (rows of `base_dim`) into actor inputs.
    fn augment(&self, base: Vec<f32>, base_dim: usize, envs: &[TrackEnv]) -> Result<Vec<f32>> {
        let _ = (base_dim, envs);
        Ok(base)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub updates: usize,
    pub skipped: usize,
}

/// Surrogate loss, its gradients and diagnostics on the rows `idx`.
pub struct SurrogateOut<G> {
    pub loss: f64,
    pub grad: G,
    pub d_log_std: Vec<f32>,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

pub fn surrogate<A: Actor>(
    actor: &A,
    batch: &RolloutBatch,
    idx: &[usize],
    hyper: &PpoHyper,
) -> Result<SurrogateOut<A::Grad>> {
    let m = idx.len();
    let ad = batch.action_dim;
    let x = RolloutBatch::gather(&batch.actor_inputs, batch.actor_dim, idx);
    let (means, cache) = actor.forward_train(&x, m)?;
    let log_std = actor.log_std();
    let mut d_mean = vec![0.0f32; m * ad];
    let mut d_log_std = vec![0.0f64; ad];
    let (mut loss, mut clipped, mut kl) = (0.0, 0usize, 0.0);
    let inv = 1.0 / m as f64;
    let (lo, hi) = (1.0 - hyper.clip, 1.0 + hyper.clip);
    for (r, &i) in idx.iter().enumerate() {
        let mu = &means[r * ad..(r + 1) * ad];
        let a = &batch.actions[i * ad..(i + 1) * ad];
        let lp = gaussian_log_prob(mu, log_std, a) as f64;
        let log_ratio = lp - batch.log_probs[i] as f64;
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i] as f64;
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(lo, hi) * adv;
        loss -= unclipped.min(clipped_obj) * inv;
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        kl += ((ratio - 1.0) - log_ratio) * inv;
        // The min picks the unclipped branch unless clipping is active in the
        // direction that would increase the objective.
        let active = unclipped <= clipped_obj;
        if active {
            let (dm, dl) = gaussian_log_prob_grad(mu, log_std, a);
            let s = -adv * ratio * inv;
            for k in 0..ad {
                d_mean[r * ad + k] = (s * dm[k] as f64) as f32;
                d_log_std[k] += s * dl[k] as f64;
            }
        }
    }
    let entropy = gaussian_entropy(log_std) as f64;
    loss -= hyper.entropy_coef * entropy;
    for d in d_log_std.iter_mut() {
        *d -= hyper.entropy_coef;
    }
    let grad = actor.backward(&cache, &d_mean)?;
    Ok(SurrogateOut {
        loss,
        grad,
        d_log_std: d_log_std.iter().map(|&v| v as f32).collect(),
        clip_fraction: clipped as f64 / m as f64,
        approx_kl: kl,
        entropy,
    })
}

/// Clipped-surrogate epochs over shuffled minibatches; the critic regresses returns.
pub fn ppo_update<A: Actor, R: Rng>(
    actor: &mut A,
    critic: Option<&mut Critic>,
    batch: &RolloutBatch,
    hyper: &PpoHyper,
    rng: &mut R,
) -> Result<PpoStats> {
    batch.check()?;
    if batch.advantages.len() != batch.len() || batch.returns.len() != batch.len() {
        return Err(Error::shape("advantages have not been computed"));
    }
    let mut stats = PpoStats::default();
    let n = batch.len();
    if n == 0 {
        return Ok(stats);
    }
    let mut critic = critic;
    let mut order: Vec<usize> = (0..n).collect();
    let mb = hyper.minibatch.min(n);
    let mut count = 0.0;
    'epochs: for _ in 0..hyper.epochs {
        order.shuffle(rng);
        let mut epoch_kl = 0.0;
        let mut epoch_n = 0.0;
        for chunk in order.chunks(mb) {
            if let Some(c) = critic.as_deref_mut() {
                match c.regress(batch, chunk, hyper.value_coef, hyper.max_grad_norm) {
                    Ok(l) => stats.value_loss += l,
                    Err(Error::Optimizer(msg)) => {
                        log::warn!("critic update skipped: {msg}");
                        stats.skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            let out = surrogate(actor, batch, chunk, hyper)?;
            if !out.loss.is_finite() {
                stats.skipped += 1;
                continue;
            }
            match actor.update(out.grad, out.d_log_std, hyper.max_grad_norm) {
                Ok(norm) => stats.grad_norm += norm,
                Err(Error::Optimizer(msg)) => {
                    log::warn!("policy update skipped: {msg}");
                    stats.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            stats.policy_loss += out.loss;
            stats.entropy += out.entropy;
            stats.clip_fraction += out.clip_fraction;
            stats.approx_kl += out.approx_kl;
            stats.updates += 1;
            count += 1.0;
            epoch_kl += out.approx_kl;
            epoch_n += 1.0;
        }
        if let Some(target) = hyper.target_kl {
            if epoch_n > 0.0 && epoch_kl / epoch_n > target {
                break 'epochs;
            }
        }
    }
    if count > 0.0 {
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.entropy /= count;
        stats.clip_fraction /= count;
        stats.approx_kl /= count;
        stats.grad_norm /= count;
    }
    Ok(stats)
}

/// Value regression alone over `epochs` shuffled passes; returns the last mean loss.
pub fn fit_critic<R: Rng>(critic: &mut Critic, batch: &RolloutBatch, hyper: &PpoHyper, rng: &mut R) -> Result<f64> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = hyper.minibatch.min(batch.len()).max(1);
    let mut last = 0.0;
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        let (mut sum, mut n) = (0.0, 0.0);
        for chunk in order.chunks(mb) {
            sum += critic.regress(batch, chunk, hyper.value_coef, hyper.max_grad_norm)?;
            n += 1.0;
        }
        if n > 0.0 {
            last = sum / n;
        }
    }
    Ok(last)
}
