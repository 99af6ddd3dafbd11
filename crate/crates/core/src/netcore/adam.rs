use serde::{Deserialize, Serialize};

use super::mlp::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for a flat run of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub hyper: AdamHyper,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(num_params: usize, hyper: AdamHyper) -> Self {
        Adam {
            hyper,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update over parameter slices laid end to end.
    /// Non-finite gradients leave everything untouched.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("parameter and gradient groups differ in count"));
        }
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                total
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape("gradient slice does not match parameter slice"));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Optimizer("non-finite gradient".into()));
        }
        self.step += 1;
        let h = self.hyper;
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let c1 = 1.0 - h.beta1.powf(self.step as f64);
        let c2 = 1.0 - h.beta2.powf(self.step as f64);
        let step_size = T::of(h.lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let eps = T::of(h.eps);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                let m = b1 * self.m[k] + (T::one() - b1) * gi;
                let v = b2 * self.v[k] + (T::one() - b2) * gi * gi;
                self.m[k] = m;
                self.v[k] = v;
                *pi -= step_size * m / (v.sqrt() / c2_sqrt + eps);
                k += 1;
            }
        }
        Ok(())
    }
}
