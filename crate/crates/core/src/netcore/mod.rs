//! Small dense networks, Adam and Gaussian policy heads, with hand-written gradients.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{Adam, AdamHyper};
pub use checkpoint::{ParamSet, Tensor, CHECKPOINT_VERSION};
pub use gaussian::{
    gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grad, gaussian_sample, GaussianHead,
    LOG_STD_INIT, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{dense_backward, Activation, Dense, DenseGrad, Mlp, MlpCache, MlpGrad, MlpSpec, Scalar};

impl<T: Scalar> Mlp<T> {
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}

impl<T: Scalar> MlpGrad<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }
}

/// Network plus its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable<T: Scalar> {
    pub net: Mlp<T>,
    pub opt: Adam<T>,
}

impl<T: Scalar> Trainable<T> {
    pub fn new(net: Mlp<T>, hyper: AdamHyper) -> Self {
        let opt = Adam::new(net.num_params(), hyper);
        Trainable { net, opt }
    }

    pub fn apply(&mut self, grads: &MlpGrad<T>) -> crate::Result<()> {
        let mut params = self.net.param_slices_mut();
        self.opt.step(&mut params, &grads.slices())
    }
}

/// Scales gradients so their joint L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [&mut MlpGrad<T>], extra: &mut [&mut [T]], max_norm: f64) -> f64 {
    let mut sq = grads.iter().map(|g| g.sq_norm().f64()).sum::<f64>();
    for e in extra.iter() {
        sq += e.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| g.scale(s));
        extra.iter_mut().for_each(|e| e.iter_mut().for_each(|v| *v *= s));
    }
    norm
}
