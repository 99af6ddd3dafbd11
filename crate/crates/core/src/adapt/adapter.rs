//! Zero-initialized residual adapter fused into every layer of a frozen policy.

use rand::Rng;

use super::world_model::concat_rows;
use crate::error::{Error, Result};
use crate::netcore::{dense_backward, Activation, Dense, DenseGrad, Mlp, MlpCache, MlpGrad, MlpSpec, ParamSet, Scalar};

pub const ADAPTER_HIDDEN: usize = 64;

/// One small network per base layer; layer `m` sees that layer's input and the
/// dynamics embedding and adds its output to the layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<T: Scalar> {
    pub embed_dim: usize,
    pub layers: Vec<Mlp<T>>,
}

#[derive(Debug, Clone)]
pub struct AdapterCache<T: Scalar> {
    batch: usize,
    /// Input to each base layer, after fusion of the previous one.
    inputs: Vec<Vec<T>>,
    /// Base layer outputs before the correction is added.
    base_out: Vec<Vec<T>>,
    xi: Vec<MlpCache<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad<T: Scalar> {
    pub layers: Vec<MlpGrad<T>>,
}

impl<T: Scalar> AdapterGrad<T> {
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|g| g.flat()).collect()
    }

    pub fn scale(&mut self, s: T) {
        self.layers.iter_mut().for_each(|g| g.scale(s));
    }
}

impl<T: Scalar> Adapter<T> {
    /// Glorot hidden layers and all-zero output layers.
    pub fn new<R: Rng + ?Sized>(base: &Mlp<T>, embed_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let layers = base
            .layers
            .iter()
            .map(|l| Mlp::new(&MlpSpec::tanh(l.in_dim + embed_dim, &[hidden], l.out_dim), 0.0, rng))
            .collect();
        Adapter { embed_dim, layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Mlp::num_params).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut T {
        for l in &mut self.layers {
            if idx < l.num_params() {
                return l.param_mut(idx);
            }
            idx -= l.num_params();
        }
        panic!("adapter parameter index out of range");
    }

    fn check(&self, base: &Mlp<T>) -> Result<()> {
        if self.layers.len() != base.layers.len() {
            return Err(Error::shape(format!(
                "adapter has {} layers, base policy has {}",
                self.layers.len(),
                base.layers.len()
            )));
        }
        for (m, (a, l)) in self.layers.iter().zip(&base.layers).enumerate() {
            if a.input_dim() != l.in_dim + self.embed_dim || a.output_dim() != l.out_dim {
                return Err(Error::shape(format!("adapter layer {m} does not match base layer {m}")));
            }
        }
        Ok(())
    }

    /// Fused forward pass; `e` holds one embedding per row.
    pub fn forward(&self, base: &Mlp<T>, x: &[T], e: &[T], batch: usize) -> Result<(Vec<T>, AdapterCache<T>)> {
        self.check(base)?;
        if x.len() != batch * base.input_dim() || e.len() != batch * self.embed_dim {
            return Err(Error::shape("adapter input or embedding has the wrong size"));
        }
        let mut inputs = Vec::with_capacity(base.layers.len());
        let mut base_out = Vec::with_capacity(base.layers.len());
        let mut xi = Vec::with_capacity(base.layers.len());
        let mut u = x.to_vec();
        for (layer, a) in base.layers.iter().zip(&self.layers) {
            let mut h = Vec::new();
            layer.forward_into(&u, batch, &mut h);
            let ain = concat_rows(&[&u, e], batch)?;
            let (c, cache) = a.forward(&ain, batch)?;
            let fused: Vec<T> = h.iter().zip(&c).map(|(&p, &q)| p + q).collect();
            inputs.push(std::mem::replace(&mut u, fused));
            base_out.push(h);
            xi.push(cache);
        }
        Ok((u, AdapterCache { batch, inputs, base_out, xi }))
    }

    pub fn predict(&self, base: &Mlp<T>, x: &[T], e: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self.forward(base, x, e, batch)?.0)
    }

    /// Gradients of the adapter parameters only; the base is treated as constant.
    pub fn backward(&self, base: &Mlp<T>, cache: &AdapterCache<T>, dy: &[T]) -> Result<AdapterGrad<T>> {
        self.check(base)?;
        let batch = cache.batch;
        if dy.len() != batch * base.output_dim() || cache.inputs.len() != base.layers.len() {
            return Err(Error::shape("stale adapter cache"));
        }
        let mut grads: Vec<MlpGrad<T>> = self.layers.iter().map(MlpGrad::zeros_like).collect();
        let mut du = dy.to_vec();
        for m in (0..base.layers.len()).rev() {
            let layer: &Dense<T> = &base.layers[m];
            let dain = self.layers[m]
                .backward_accumulate(&cache.xi[m], &du, &mut grads[m], m > 0)?;
            if m == 0 {
                break;
            }
            let mut scratch = DenseGrad::zeros_like(layer);
            let mut prev = dense_backward(layer, &cache.inputs[m], &cache.base_out[m], &du, batch, &mut scratch, true)
                .expect("requested");
            let dain = dain.expect("requested");
            let w = layer.in_dim + self.embed_dim;
            for r in 0..batch {
                for k in 0..layer.in_dim {
                    prev[r * layer.in_dim + k] += dain[r * w + k];
                }
            }
            du = prev;
        }
        Ok(AdapterGrad { layers: grads })
    }

    pub fn cast<U: Scalar>(&self) -> Adapter<U> {
        Adapter {
            embed_dim: self.embed_dim,
            layers: self.layers.iter().map(Mlp::cast).collect(),
        }
    }
}

impl Adapter<f32> {
    pub fn export(&self, set: &mut ParamSet) -> Result<()> {
        set.set_meta("adapter.embed_dim", self.embed_dim)?;
        set.set_meta("adapter.layers", self.layers.len())?;
        for (m, l) in self.layers.iter().enumerate() {
            l.export(&format!("adapter.{m}"), set)?;
        }
        Ok(())
    }

    pub fn import(set: &ParamSet) -> Result<Self> {
        let embed_dim: usize = set.meta("adapter.embed_dim")?;
        let n: usize = set.meta("adapter.layers")?;
        let layers = (0..n)
            .map(|m| Mlp::import_recorded(&format!("adapter.{m}"), set))
            .collect::<Result<Vec<_>>>()?;
        Ok(Adapter { embed_dim, layers })
    }
}

/// True when every output layer of the adapter is still exactly zero.
pub fn is_identity<T: Scalar>(adapter: &Adapter<T>) -> bool {
    adapter.layers.iter().all(|l| {
        let last = l.layers.last().expect("non-empty");
        last.w.iter().chain(&last.b).all(|v| *v == T::zero()) && last.activation == Activation::Linear
    })
}
