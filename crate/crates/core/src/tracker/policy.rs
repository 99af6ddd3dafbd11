//! Gaussian MLP policy and the privileged value function.

use rand::Rng;

use super::ppo::{Actor, RolloutBatch};
use crate::error::{Error, Result};
use crate::netcore::{
    clip_grad_norm, Adam, AdamHyper, GaussianHead, Mlp, MlpCache, MlpGrad, MlpSpec, ParamSet,
};

pub const POLICY_HIDDEN: [usize; 3] = [128, 128, 64];
pub const CRITIC_HIDDEN: [usize; 3] = [256, 128, 64];

/// Mean network plus a state-independent log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp<f32>,
    pub head: GaussianHead<f32>,
    pub opt: Adam<f32>,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], actions: usize, lr: f64, rng: &mut R) -> Self {
        let net = Mlp::new(&MlpSpec::tanh(input, hidden, actions), 0.01, rng);
        Self::from_net(net, GaussianHead::new(actions), lr)
    }

    pub fn from_net(net: Mlp<f32>, head: GaussianHead<f32>, lr: f64) -> Self {
        let opt = Adam::new(net.num_params() + head.dim(), AdamHyper::with_lr(lr));
        Policy { net, head, opt }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.hyper.lr = lr;
    }

    /// Copies weights only; optimizer state starts fresh.
    pub fn with_fresh_optimizer(&self, lr: f64) -> Self {
        Self::from_net(self.net.clone(), self.head.clone(), lr)
    }

    pub fn export(&self, set: &mut ParamSet) -> Result<()> {
        self.net.export("policy", set)?;
        set.insert("policy.log_std", vec![self.head.dim()], self.head.log_std.clone())?;
        self.opt.export("policy", set)
    }

    pub fn import(set: &ParamSet) -> Result<Self> {
        let net: Mlp<f32> = Mlp::import_recorded("policy", set)?;
        let dim = net.output_dim();
        let log_std = set.expect("policy.log_std", &[dim])?.data.clone();
        let head = GaussianHead { log_std };
        let n = net.num_params() + dim;
        let opt = match set.get("policy.adam_m") {
            Some(_) => Adam::import("policy", set, n)?,
            None => Adam::new(n, AdamHyper::default()),
        };
        Ok(Policy { net, head, opt })
    }

    pub fn digest(&self) -> String {
        let mut set = ParamSet::new();
        self.net.export("policy", &mut set).expect("fresh set");
        set.insert("policy.log_std", vec![self.head.dim()], self.head.log_std.clone())
            .expect("fresh set");
        set.digest()
    }
}

impl Actor for Policy {
    type Cache = MlpCache<f32>;
    type Grad = MlpGrad<f32>;

    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn log_std(&self) -> &[f32] {
        &self.head.log_std
    }

    fn means(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.net.predict(x, batch)
    }

    fn forward_train(&self, x: &[f32], batch: usize) -> Result<(Vec<f32>, Self::Cache)> {
        self.net.forward(x, batch)
    }

    fn backward(&self, cache: &Self::Cache, d_mean: &[f32]) -> Result<Self::Grad> {
        let mut g = MlpGrad::zeros_like(&self.net);
        self.net.backward_accumulate(cache, d_mean, &mut g, false)?;
        Ok(g)
    }

    fn update(&mut self, mut grad: Self::Grad, mut d_log_std: Vec<f32>, max_grad_norm: f64) -> Result<f64> {
        if d_log_std.len() != self.head.dim() {
            return Err(Error::shape("log-std gradient has the wrong length"));
        }
        let norm = clip_grad_norm(&mut [&mut grad], &mut [&mut d_log_std], max_grad_norm);
        let mut params = self.net.param_slices_mut();
        params.push(&mut self.head.log_std);
        let mut grads = grad.slices();
        grads.push(&d_log_std);
        self.opt.step(&mut params, &grads)?;
        self.head.clamp();
        Ok(norm)
    }
}

/// Value function over privileged inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp<f32>,
    pub opt: Adam<f32>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let net = Mlp::new(&MlpSpec::tanh(input, hidden, 1), 1.0, rng);
        let opt = Adam::new(net.num_params(), AdamHyper::with_lr(lr));
        Critic { net, opt }
    }

    pub fn values(&self, x: &[f32], batch: usize) -> Result<Vec<f32>> {
        self.net.predict(x, batch)
    }

    /// One step on `value_coef * mean((V - R)^2) / 2`; returns the unweighted loss.
    pub fn regress(&mut self, batch: &RolloutBatch, idx: &[usize], value_coef: f64, max_grad_norm: f64) -> Result<f64> {
        let x = RolloutBatch::gather(&batch.critic_inputs, batch.critic_dim, idx);
        let targets: Vec<f32> = idx.iter().map(|&i| batch.returns[i]).collect();
        self.fit(&x, &targets, value_coef, max_grad_norm)
    }

    pub fn fit(&mut self, x: &[f32], targets: &[f32], value_coef: f64, max_grad_norm: f64) -> Result<f64> {
        let m = targets.len();
        let (v, cache) = self.net.forward(x, m)?;
        let mut loss = 0.0;
        let dy: Vec<f32> = v
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let d = (p - t) as f64;
                loss += 0.5 * d * d / m as f64;
                (value_coef * d / m as f64) as f32
            })
            .collect();
        let mut g = MlpGrad::zeros_like(&self.net);
        self.net.backward_accumulate(&cache, &dy, &mut g, false)?;
        clip_grad_norm(&mut [&mut g], &mut [], max_grad_norm);
        let mut params = self.net.param_slices_mut();
        self.opt.step(&mut params, &g.slices())?;
        Ok(loss)
    }

    pub fn export(&self, set: &mut ParamSet) -> Result<()> {
        self.net.export("critic", set)?;
        self.opt.export("critic", set)
    }

    pub fn import(set: &ParamSet) -> Result<Self> {
        let net: Mlp<f32> = Mlp::import_recorded("critic", set)?;
        let n = net.num_params();
        let opt = match set.get("critic.adam_m") {
            Some(_) => Adam::import("critic", set, n)?,
            None => Adam::new(n, AdamHyper::default()),
        };
        Ok(Critic { net, opt })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::gaussian_log_prob;
    use crate::tracker::ppo::{ppo_update, surrogate, PpoHyper};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch_for(policy: &Policy, n: usize, rng: &mut ChaCha8Rng, adv: f32) -> RolloutBatch {
        let (d, a) = (policy.input_dim(), policy.action_dim());
        let mut b = RolloutBatch::new(n, d, 3, a);
        b.steps = 1;
        b.actor_inputs = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let means = policy.means(&b.actor_inputs, n).unwrap();
        for i in 0..n {
            let mu = &means[i * a..(i + 1) * a];
            let act = policy.head.sample(mu, rng);
            b.log_probs.push(gaussian_log_prob(mu, &policy.head.log_std, &act));
            b.actions.extend(act);
        }
        b.critic_inputs = vec![0.0; n * 3];
        b.values = vec![0.0; n];
        b.rewards = vec![0.0; n];
        b.dones = vec![false; n];
        b.terminated = vec![false; n];
        b.bootstrap = vec![0.0; n];
        b.advantages = (0..n).map(|i| adv * (i as f32 + 1.0)).collect();
        b.returns = vec![0.0; n];
        b
    }

    #[test]
    fn identity_ratio_has_no_clipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(5, &[8], 2, 1e-3, &mut rng);
        let b = batch_for(&p, 16, &mut rng, 0.5);
        let h = PpoHyper {
            entropy_coef: 0.0,
            ..Default::default()
        };
        let idx: Vec<usize> = (0..16).collect();
        let out = surrogate(&p, &b, &idx, &h).unwrap();
        assert_eq!(out.clip_fraction, 0.0);
        let mean_adv = b.advantages.iter().map(|&a| a as f64).sum::<f64>() / 16.0;
        assert!((out.loss + mean_adv).abs() < 1e-5, "{} vs {}", out.loss, -mean_adv);
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Policy::new(5, &[8], 2, 1e-3, &mut rng);
        let b = batch_for(&p, 8, &mut rng, 0.0);
        let h = PpoHyper {
            entropy_coef: 0.0,
            ..Default::default()
        };
        let idx: Vec<usize> = (0..8).collect();
        let out = surrogate(&p, &b, &idx, &h).unwrap();
        assert!(out.grad.flat().iter().all(|&g| g == 0.0));
        assert!(out.d_log_std.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn positive_advantage_raises_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Policy::new(5, &[8], 2, 1e-3, &mut rng);
        let b = batch_for(&p, 1, &mut rng, 1.0);
        let h = PpoHyper {
            epochs: 1,
            minibatch: 1,
            entropy_coef: 0.0,
            target_kl: None,
            ..Default::default()
        };
        let before = b.log_probs[0];
        ppo_update(&mut p, None, &b, &h, &mut rng).unwrap();
        let mu = p.means(&b.actor_inputs, 1).unwrap();
        let after = gaussian_log_prob(&mu, &p.head.log_std, &b.actions);
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Policy::new(5, &[8, 4], 2, 1e-3, &mut rng);
        let c = Critic::new(7, &[8], 1e-3, &mut rng);
        let mut set = ParamSet::new();
        p.export(&mut set).unwrap();
        c.export(&mut set).unwrap();
        let bytes = set.to_bytes().unwrap();
        let back = ParamSet::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        assert_eq!(Policy::import(&back).unwrap(), p);
        assert_eq!(Critic::import(&back).unwrap(), c);
    }
}
