//! Diagonal Gaussian action distributions with a state-independent log-std.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::Scalar;

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -0.7;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead<T: Scalar> {
    pub log_std: Vec<T>,
}

impl<T: Scalar> GaussianHead<T> {
    pub fn new(dim: usize) -> Self {
        GaussianHead {
            log_std: vec![T::of(LOG_STD_INIT); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamp(&mut self) {
        let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        for v in &mut self.log_std {
            *v = v.max(lo).min(hi);
        }
    }

    pub fn log_prob(&self, mean: &[T], action: &[T]) -> T {
        gaussian_log_prob(mean, &self.log_std, action)
    }

    pub fn entropy(&self) -> T {
        gaussian_entropy(&self.log_std)
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[T], rng: &mut R) -> Vec<T> {
        gaussian_sample(mean, &self.log_std, rng)
    }
}

pub fn gaussian_log_prob<T: Scalar>(mean: &[T], log_std: &[T], action: &[T]) -> T {
    let half = T::of(0.5);
    let c = T::of(HALF_LOG_2PI);
    mean.iter()
        .zip(log_std)
        .zip(action)
        .fold(T::zero(), |acc, ((&mu, &ls), &a)| {
            let z = (a - mu) / ls.exp();
            acc - half * z * z - ls - c
        })
}

/// Gradients of the log-density with respect to the mean and the log-std.
pub fn gaussian_log_prob_grad<T: Scalar>(
    mean: &[T],
    log_std: &[T],
    action: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for ((&mu, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let inv_var = (-(ls + ls)).exp();
        let diff = a - mu;
        d_mean.push(diff * inv_var);
        d_log_std.push(diff * diff * inv_var - T::one());
    }
    (d_mean, d_log_std)
}

pub fn gaussian_entropy<T: Scalar>(log_std: &[T]) -> T {
    let c = T::of(0.5 + HALF_LOG_2PI);
    log_std.iter().fold(T::zero(), |acc, &ls| acc + c + ls)
}

pub fn gaussian_sample<T: Scalar, R: Rng + ?Sized>(mean: &[T], log_std: &[T], rng: &mut R) -> Vec<T> {
    mean.iter()
        .zip(log_std)
        .map(|(&mu, &ls)| {
            let z: f64 = rng.sample(StandardNormal);
            mu + ls.exp() * T::of(z)
        })
        .collect()
}
