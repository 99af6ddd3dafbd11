//! Stage-two fine-tuning: the adapter policy, the world model and the loop
//! that alternates between them under randomized dynamics.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::{Adapter, AdapterCache, AdapterGrad, ADAPTER_HIDDEN};
use super::history::{HISTORY_LEN, ROLLOUT_LEN, WINDOW_LEN};
use super::replay::WindowReplay;
use super::world_model::{concat_rows, encode_history, persistence_loss, wm_loss, WindowShape, WmLoss, EMBED_DIM};
use crate::error::{Error, Result};
use crate::eval::write_text;
use crate::motions::MotionClip;
use crate::netcore::{clip_grad_norm, Adam, AdamHyper, GaussianHead, Mlp, MlpGrad, MlpSpec, ParamSet};
use crate::physics::DisturbanceRanges;
use crate::tracker::features::{critic_input_len, proprio_len};
use crate::tracker::{
    curve_csv, fit_critic, ppo_update, Actor, Critic, CurveRow, Policy, PpoHyper, PpoStats, StepHook, TaskSpec,
    TrackEnv, VecEnv, CRITIC_HIDDEN,
};

pub const PHI_HIDDEN: [usize; 2] = [64, 64];
pub const OMEGA_HIDDEN: [usize; 2] = [128, 128];

/// History encoder φ and residual next-state predictor ω, trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub phi: Mlp<f32>,
    pub omega: Mlp<f32>,
    pub opt: Adam<f32>,
    pub shape: WindowShape,
}

impl WorldModel {
    /// Both output layers start at zero: `e = 0` and ω predicts persistence.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        embed_dim: usize,
        phi_hidden: &[usize],
        omega_hidden: &[usize],
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let shape = WindowShape {
            h: HISTORY_LEN,
            n: ROLLOUT_LEN,
            state_dim,
            action_dim,
        };
        let phi = Mlp::new(&MlpSpec::tanh(HISTORY_LEN * shape.pair_dim(), phi_hidden, embed_dim), 0.0, rng);
        let omega = Mlp::new(
            &MlpSpec::tanh(state_dim + action_dim + embed_dim, omega_hidden, state_dim),
            0.0,
            rng,
        );
        let opt = Adam::new(phi.num_params() + omega.num_params(), AdamHyper::with_lr(lr));
        WorldModel { phi, omega, opt, shape }
    }

    pub fn embed_dim(&self) -> usize {
        self.phi.output_dim()
    }

    pub fn loss(&self, windows: &[f32], batch: usize) -> Result<WmLoss<f32>> {
        wm_loss(&self.phi, &self.omega, windows, batch, self.shape, false)
    }

    /// One Adam step on a batch of windows; returns the loss before the step.
    pub fn step(&mut self, windows: &[f32], batch: usize, max_grad_norm: f64) -> Result<WmLoss<f32>> {
        let mut out = wm_loss(&self.phi, &self.omega, windows, batch, self.shape, true)?;
        let mut gp = out.phi_grad.take().expect("requested");
        let mut go = out.omega_grad.take().expect("requested");
        clip_grad_norm(&mut [&mut gp, &mut go], &mut [], max_grad_norm);
        let mut params = self.phi.param_slices_mut();
        params.extend(self.omega.param_slices_mut());
        let mut grads = gp.slices();
        grads.extend(go.slices());
        self.opt.step(&mut params, &grads)?;
        Ok(out)
    }

    pub fn export(&self, set: &mut ParamSet) -> Result<()> {
        self.phi.export("phi", set)?;
        self.omega.export("omega", set)?;
        set.set_meta("world_model.shape", [self.shape.h, self.shape.n, self.shape.state_dim, self.shape.action_dim])?;
        self.opt.export("world_model", set)
    }

    pub fn import(set: &ParamSet) -> Result<Self> {
        let phi: Mlp<f32> = Mlp::import_recorded("phi", set)?;
        let omega: Mlp<f32> = Mlp::import_recorded("omega", set)?;
        let [h, n, state_dim, action_dim]: [usize; 4] = set.meta("world_model.shape")?;
        let shape = WindowShape { h, n, state_dim, action_dim };
        if phi.input_dim() != h * shape.pair_dim() || omega.output_dim() != state_dim {
            return Err(Error::shape("world model shapes disagree"));
        }
        let np = phi.num_params() + omega.num_params();
        let opt = match set.get("world_model.adam_m") {
            Some(_) => Adam::import("world_model", set, np)?,
            None => Adam::new(np, AdamHyper::default()),
        };
        Ok(WorldModel { phi, omega, opt, shape })
    }
}

/// Frozen base policy with a trainable adapter conditioned on `e = φ(history)`.
///
/// Inputs are the base policy input followed by the embedding. PPO gradients
/// stop at `e`; `phi` is a snapshot refreshed from the world model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPolicy {
    pub base: Policy,
    pub adapter: Adapter<f32>,
    pub phi: Mlp<f32>,
    /// Exploration noise of the adapted policy; starts from the base's.
    pub head: GaussianHead<f32>,
    pub opt: Adam<f32>,
}

impl AdapterPolicy {
    pub fn new<R: Rng + ?Sized>(base: Policy, phi: Mlp<f32>, hidden: usize, lr: f64, rng: &mut R) -> Self {
        let adapter = Adapter::new(&base.net, phi.output_dim(), hidden, rng);
        let head = base.head.clone();
        let opt = Adam::new(adapter.num_params() + head.dim(), AdamHyper::with_lr(lr));
        AdapterPolicy { base, adapter, phi, head, opt }
    }

    pub fn base_dim(&self) -> usize {
        self.base.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.adapter.embed_dim
    }

    fn split(&self, x: &[f32], batch: usize) -> Result<(Vec<f32>, Vec<f32>)> {
        let (bd, ed) = (self.base_dim(), self.embed_dim());
        if x.len() != batch * (bd + ed) {
            return Err(Error::shape(format!(
                "adapter policy expects rows of {}, got {} values for {batch} rows",
                bd + ed,
                x.len()
            )));
        }
        let mut b = Vec::with_capacity(batch * bd);
        let mut e = Vec::with_capacity(batch * ed);
        for row in x.chunks(bd + ed) {
            b.extend_from_slice(&row[..bd]);
            e.extend_from_slice(&row[bd..]);
        }
        Ok((b, e))
    }

    pub fn export(&self, set: &mut ParamSet) -> Result<()> {
        self.base.export(set)?;
        self.phi.export("phi_snapshot", set)?;
        self.adapter.export(set)?;
        set.insert("adapter.log_std", vec![self.head.dim()], self.head.log_std.clone())?;
        self.opt.export("adapter", set)
    }

    pub fn import(set: &ParamSet) -> Result<Self> {
        let base = Policy::import(set)?;
        let phi: Mlp<f32> = Mlp::import_recorded("phi_snapshot", set)?;
        let adapter = Adapter::import(set)?;
        if adapter.embed_dim != phi.output_dim() {
            return Err(Error::shape("adapter and encoder disagree on the embedding size"));
        }
        adapter.predict(&base.net, &vec![0.0; base.net.input_dim()], &vec![0.0; adapter.embed_dim], 1)?;
        let log_std = set
            .get("adapter.log_std")
            .ok_or_else(|| Error::shape("checkpoint lacks adapter.log_std"))?
            .data
            .clone();
        if log_std.len() != base.head.dim() {
            return Err(Error::shape("adapter log-std has the wrong length"));
        }
        let head = GaussianHead { log_std };
        let n = adapter.num_params() + head.dim();
        let opt = match set.get("adapter.adam_m") {
            Some(_) => Adam::import("adapter", set, n)?,
            None => Adam::new(n, AdamHyper::default()),
        };
        Ok(AdapterPolicy { base, adapter, phi, head, opt })
    }
}

impl Actor for AdapterPolicy {
    type Cache = AdapterCache<f32>;
    type Grad = AdapterGrad<f32>;

    fn input_dim(&self) -> usize {
        self.base_dim() + self.embed_dim()
    }

    fn action_dim(&self) -> usize {
        self.base.net.output_dim()
    }

    fn log_std(&self) -> &[f32] {
        &self.head.log_std
    }

    fn means(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        let (b, e) = self.split(x, batch)?;
        self.adapter.predict(&self.base.net, &b, &e, batch)
    }

    fn forward_train(&self, x: &[f32], batch: usize) -> Result<(Vec<f32>, Self::Cache)> {
        let (b, e) = self.split(x, batch)?;
        self.adapter.forward(&self.base.net, &b, &e, batch)
    }

    fn backward(&self, cache: &Self::Cache, d_mean: &[f32]) -> Result<Self::Grad> {
        self.adapter.backward(&self.base.net, cache, d_mean)
    }

    fn update(&mut self, mut grad: Self::Grad, mut d_log_std: Vec<f32>, max_grad_norm: f64) -> Result<f64> {
        if d_log_std.len() != self.head.dim() {
            return Err(Error::shape("log-std gradient has the wrong length"));
        }
        let mut refs: Vec<&mut MlpGrad<f32>> = grad.layers.iter_mut().collect();
        let norm = clip_grad_norm(&mut refs, &mut [&mut d_log_std], max_grad_norm);
        let mut grads: Vec<&[f32]> = grad.layers.iter().flat_map(|g| g.slices()).collect();
        grads.push(&d_log_std);
        let mut params = self.adapter.param_slices_mut();
        params.push(&mut self.head.log_std);
        self.opt.step(&mut params, &grads)?;
        self.head.clamp();
        Ok(norm)
    }

    fn history_len(&self) -> usize {
        HISTORY_LEN
    }

    fn augment(&self, base: Vec<f32>, base_dim: usize, envs: &[TrackEnv]) -> Result<Vec<f32>> {
        let n = envs.len();
        if base_dim != self.base_dim() || base.len() != n * base_dim {
            return Err(Error::shape("base inputs do not match the adapter policy"));
        }
        let mut hist = Vec::with_capacity(n * self.phi.input_dim());
        for env in envs {
            if env.history.capacity() * env.history.pair_dim() != self.phi.input_dim() {
                return Err(Error::shape("environment history does not match the encoder"));
            }
            env.history.padded_into(&mut hist);
        }
        let e = encode_history(&self.phi, &hist, n)?;
        concat_rows(&[&base, &e], n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub ppo: PpoHyper,
    pub budget_steps: usize,
    pub eval_every: usize,
    /// Leading iterations that fit only the fresh critic.
    pub value_warmup: usize,
    /// When false, φ stays at its zero-output initialization and `e = 0`.
    pub world_model: bool,
    pub wm_minibatches: usize,
    pub wm_batch: usize,
    pub wm_lr: f64,
    pub replay_capacity: usize,
    pub embed_dim: usize,
    pub phi_hidden: Vec<usize>,
    pub omega_hidden: Vec<usize>,
    pub adapter_hidden: usize,
    /// Learning rate of the adapter and its log-std. The PPO-DR baseline uses `ppo.lr`.
    pub adapter_lr: f64,
    pub critic_hidden: Vec<usize>,
    /// Environments and steps of the fresh rollout used for held-out world-model error.
    pub heldout_envs: usize,
    pub heldout_steps: usize,
    pub heldout_windows: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            ppo: PpoHyper::default(),
            budget_steps: 1_000_000,
            eval_every: 10,
            value_warmup: 5,
            world_model: true,
            wm_minibatches: 4,
            wm_batch: 32,
            wm_lr: 1e-3,
            replay_capacity: 200_000,
            embed_dim: EMBED_DIM,
            phi_hidden: PHI_HIDDEN.to_vec(),
            omega_hidden: OMEGA_HIDDEN.to_vec(),
            adapter_hidden: ADAPTER_HIDDEN,
            adapter_lr: 1e-3,
            critic_hidden: CRITIC_HIDDEN.to_vec(),
            heldout_envs: 32,
            heldout_steps: 200,
            heldout_windows: 256,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.embed_dim == 0 || self.adapter_hidden == 0 {
            return Err(Error::config("embedding and adapter widths must be positive"));
        }
        if self.phi_hidden.is_empty() || self.omega_hidden.is_empty() || self.critic_hidden.is_empty() {
            return Err(Error::config("networks need at least one hidden layer"));
        }
        if self.world_model && (self.wm_batch == 0 || self.wm_minibatches == 0) {
            return Err(Error::config("world-model phase needs a positive batch and minibatch count"));
        }
        if self.replay_capacity < WINDOW_LEN {
            return Err(Error::config(format!("replay must hold at least {WINDOW_LEN} steps")));
        }
        if !(self.wm_lr > 0.0) {
            return Err(Error::config("wm_lr must be positive"));
        }
        if !(self.adapter_lr > 0.0) {
            return Err(Error::config("adapter_lr must be positive"));
        }
        Ok(())
    }
}

/// World-model error on windows the model never trained on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WmEval {
    pub windows: usize,
    pub loss: f64,
    pub persistence: f64,
    pub per_step: Vec<f64>,
    pub persistence_per_step: Vec<f64>,
}

impl WmEval {
    /// Relative reduction of the loss against persistence.
    pub fn improvement(&self) -> f64 {
        if self.persistence > 0.0 {
            1.0 - self.loss / self.persistence
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Adapter policy with the best evaluation score seen.
    pub policy: AdapterPolicy,
    pub world: WorldModel,
    pub critic: Critic,
    pub best_sr: f64,
    pub best_iteration: usize,
    pub env_steps: usize,
    pub curve: Vec<CurveRow>,
    pub base_digest_before: String,
    pub base_digest_after: String,
    pub heldout: WmEval,
}

impl AdaptOutcome {
    pub fn to_params(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        self.policy.export(&mut set)?;
        self.world.export(&mut set)?;
        self.critic.export(&mut set)?;
        set.set_meta("best_sr", self.best_sr)?;
        set.set_meta("env_steps", self.env_steps)?;
        set.set_meta("base_digest", &self.base_digest_before)?;
        Ok(set)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.to_params()?.save(&dir.join(format!("{stem}.ckpt")))?;
        write_text(&dir.join(format!("{stem}_curve.csv")), &curve_csv(&self.curve))?;
        write_text(
            &dir.join(format!("{stem}_world_model.json")),
            &(serde_json::to_string_pretty(&self.heldout)? + "\n"),
        )
    }
}

/// World-model loss and persistence loss on `count` windows from a fresh rollout.
pub fn heldout_wm_eval(
    task: &TaskSpec,
    clips: &[MotionClip],
    ranges: &DisturbanceRanges,
    actor: &AdapterPolicy,
    world: &WorldModel,
    critic: &Critic,
    config: &AdaptConfig,
) -> Result<WmEval> {
    let seed = config.seed ^ 0x4845_4c44;
    let mut envs = VecEnv::new(task.clone(), clips.to_vec(), ranges.clone(), config.heldout_envs, HISTORY_LEN, seed)?;
    envs.set_random_start(false)?;
    let pd = world.shape.pair_dim();
    let mut replay = WindowReplay::new(config.heldout_envs, pd, WINDOW_LEN, usize::MAX);
    let hyper = PpoHyper {
        horizon: config.heldout_steps,
        num_envs: config.heldout_envs,
        ..config.ppo
    };
    collect_into(&mut envs, actor, critic, &hyper, &mut replay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = WmEval::default();
    let mut done = 0;
    while done < config.heldout_windows {
        let b = (config.heldout_windows - done).min(64);
        let Some(w) = replay.sample_batch(b, &mut rng) else {
            log::warn!("held-out rollout produced no complete window");
            break;
        };
        let l = world.loss(&w, b)?;
        let p = persistence_loss(&w, b, world.shape)?;
        let wt = b as f64;
        out.loss += l.loss * wt;
        out.persistence += p.loss * wt;
        accumulate(&mut out.per_step, &l.per_step, wt);
        accumulate(&mut out.persistence_per_step, &p.per_step, wt);
        done += b;
    }
    let n = if done == 0 { f64::NAN } else { done as f64 };
    out.windows = done;
    out.loss /= n;
    out.persistence /= n;
    out.per_step.iter_mut().for_each(|v| *v /= n);
    out.persistence_per_step.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

fn accumulate(acc: &mut Vec<f64>, v: &[f64], w: f64) {
    acc.resize(v.len(), 0.0);
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b * w;
    }
}

fn collect_into(
    envs: &mut VecEnv,
    actor: &AdapterPolicy,
    critic: &Critic,
    hyper: &PpoHyper,
    replay: &mut WindowReplay,
) -> Result<(crate::tracker::RolloutBatch, crate::tracker::RolloutStats)> {
    let mut sink = Ok(());
    let mut hook = |i: usize, s: &[f32], a: &[f32], done: bool| {
        if sink.is_ok() {
            sink = replay.push(i, s, a, done);
        }
    };
    let out = envs.collect(actor, critic, hyper, Some(&mut hook as &mut StepHook))?;
    sink?;
    Ok(out)
}

/// Alternating world-model and adapter training on top of a frozen `base`.
/// `evaluate` scores a candidate; the best-scoring snapshot is returned.
pub fn train_adapter(
    task: &TaskSpec,
    clips: Vec<MotionClip>,
    ranges: DisturbanceRanges,
    base: Policy,
    config: &AdaptConfig,
    evaluate: &dyn Fn(&AdapterPolicy) -> Result<f64>,
) -> Result<AdaptOutcome> {
    config.validate()?;
    let hyper = config.ppo;
    let base_digest_before = base.digest();
    let sd = proprio_len(&task.model);
    let ad = task.model.num_joints();
    if base.net.output_dim() != ad {
        return Err(Error::config("base policy does not match the robot"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xada7);
    let mut world = WorldModel::new(sd, ad, config.embed_dim, &config.phi_hidden, &config.omega_hidden, config.wm_lr, &mut rng);
    let mut actor = AdapterPolicy::new(base, world.phi.clone(), config.adapter_hidden, config.adapter_lr, &mut rng);
    let mut critic = Critic::new(critic_input_len(&task.model), &config.critic_hidden, hyper.critic_lr, &mut rng);
    let mut envs = VecEnv::new(task.clone(), clips.clone(), ranges.clone(), hyper.num_envs, HISTORY_LEN, config.seed)?;
    let mut replay = WindowReplay::new(hyper.num_envs, sd + ad, WINDOW_LEN, config.replay_capacity);
    let start = Instant::now();
    let mut best = (evaluate(&actor)?, 0usize, actor.clone());
    log::info!("iteration 0: eval SR {:.1}", best.0);
    let mut curve = Vec::new();
    let mut steps = 0;
    let mut iteration = 0;
    while steps < config.budget_steps {
        iteration += 1;
        let (batch, rstats) = collect_into(&mut envs, &actor, &critic, &hyper, &mut replay)?;
        steps += batch.len();
        let (mut wm, mut persist, mut wm_n) = (0.0, 0.0, 0.0);
        if config.world_model {
            for _ in 0..config.wm_minibatches {
                let Some(w) = replay.sample_batch(config.wm_batch, &mut rng) else {
                    break;
                };
                match world.step(&w, config.wm_batch, hyper.max_grad_norm) {
                    Ok(l) => {
                        wm += l.loss;
                        persist += persistence_loss(&w, config.wm_batch, world.shape)?.loss;
                        wm_n += 1.0;
                    }
                    Err(Error::Optimizer(msg)) => log::warn!("world-model update skipped: {msg}"),
                    Err(e) => return Err(e),
                }
            }
            actor.phi = world.phi.clone();
        }
        let pstats = if iteration <= config.value_warmup {
            PpoStats {
                value_loss: fit_critic(&mut critic, &batch, &hyper, &mut rng)?,
                ..Default::default()
            }
        } else {
            ppo_update(&mut actor, Some(&mut critic), &batch, &hyper, &mut rng)?
        };
        let mut row = CurveRow::from_stats(iteration, steps, start.elapsed().as_secs_f64(), &rstats, &pstats);
        let avg = |v: f64| if wm_n > 0.0 { v / wm_n } else { f64::NAN };
        row.extra = vec![
            ("wm_loss".into(), avg(wm)),
            ("persistence_loss".into(), avg(persist)),
            ("disturbed_resets".into(), rstats.disturbed_resets as f64),
            ("divergences".into(), rstats.divergences as f64),
        ];
        if rstats.divergences > 0 {
            log::warn!("iteration {iteration}: {} simulation divergences", rstats.divergences);
        }
        if iteration % config.eval_every == 0 || steps >= config.budget_steps {
            let sr = evaluate(&actor)?;
            row.eval_sr = Some(sr);
            if sr > best.0 {
                best = (sr, iteration, actor.clone());
            }
            log::info!(
                "iteration {iteration}: {steps} steps, reward {:.3}, wm {:.4} vs {:.4}, eval SR {sr:.1}",
                rstats.mean_reward,
                avg(wm),
                avg(persist)
            );
        }
        curve.push(row);
    }
    let base_digest_after = actor.base.digest();
    let heldout = heldout_wm_eval(task, &clips, &ranges, &best.2, &world, &critic, config)?;
    log::info!(
        "held-out world model: {:.4} vs persistence {:.4} over {} windows",
        heldout.loss,
        heldout.persistence,
        heldout.windows
    );
    Ok(AdaptOutcome {
        policy: best.2,
        world,
        critic,
        best_sr: best.0,
        best_iteration: best.1,
        env_steps: steps,
        curve,
        base_digest_before,
        base_digest_after,
        heldout,
    })
}
