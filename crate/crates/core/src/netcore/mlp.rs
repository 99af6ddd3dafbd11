//! Dense feed-forward networks with explicit batched forward and backward passes.
//!
//! Batches are row-major `batch × features` slices. Weights are stored
//! `out × in`, row-major, so every inner loop walks contiguous memory.

use std::fmt::Debug;

use num_traits::{Float, NumAssign};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row/column strides of a matrix operand.
pub type Strides = (isize, isize);

pub trait Scalar: Float + NumAssign + Debug + Default + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `C = alpha * A B + beta * C` for `A: m × k`, `B: k × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], sa: Strides, b: &[Self], sb: Strides, beta: Self, c: &mut [Self], sc: Strides);
}

fn span(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize + 1
    }
}

macro_rules! impl_gemm {
    ($t:ty, $f:path) => {
        #[allow(clippy::too_many_arguments)]
        fn gemm(m: usize, k: usize, n: usize, alpha: $t, a: &[$t], sa: Strides, b: &[$t], sb: Strides, beta: $t, c: &mut [$t], sc: Strides) {
            assert!(a.len() >= span(m, k, sa) && b.len() >= span(k, n, sb) && c.len() >= span(m, n, sc));
            assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0 && sc.0 >= 0 && sc.1 >= 0);
            // SAFETY: every index the kernel touches lies inside the spans asserted above.
            unsafe {
                $f(m, k, n, alpha, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, beta, c.as_mut_ptr(), sc.0, sc.1);
            }
        }
    };
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        f64::from(self)
    }
    impl_gemm!(f32, matrixmultiply::sgemm);
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    impl_gemm!(f64, matrixmultiply::dgemm);
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Linear => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![T::zero(); in_dim * out_dim],
            b: vec![T::zero(); out_dim],
            activation,
        }
    }

    /// Uniform Glorot initialization scaled by `gain`; zero biases.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let limit = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| T::of(if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 }))
            .collect();
        Dense {
            in_dim,
            out_dim,
            w,
            b: vec![T::zero(); out_dim],
            activation,
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `y = act(x Wᵀ + b)` for a batch of rows.
    pub fn forward_into(&self, x: &[T], batch: usize, y: &mut Vec<T>) {
        let (ni, no) = (self.in_dim, self.out_dim);
        y.clear();
        y.resize(batch * no, T::zero());
        if batch == 0 {
            return;
        }
        for r in 0..batch {
            y[r * no..(r + 1) * no].copy_from_slice(&self.b);
        }
        T::gemm(batch, ni, no, T::one(), x, (ni as isize, 1), &self.w, (1, ni as isize), T::one(), y, (no as isize, 1));
        if self.activation != Activation::Linear {
            for v in y.iter_mut() {
                *v = self.activation.apply(*v);
            }
        }
    }
}

/// Gradients for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T: Scalar> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> DenseGrad<T> {
    pub fn zeros_like(layer: &Dense<T>) -> Self {
        DenseGrad {
            w: vec![T::zero(); layer.w.len()],
            b: vec![T::zero(); layer.b.len()],
        }
    }

    pub fn add(&mut self, other: &DenseGrad<T>) {
        axpy(T::one(), &other.w, &mut self.w);
        axpy(T::one(), &other.b, &mut self.b);
    }

    pub fn scale(&mut self, s: T) {
        self.w.iter_mut().chain(self.b.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> T {
        dot(&self.w, &self.w) + dot(&self.b, &self.b)
    }
}

/// Backward pass through one layer given its input, its output and `dL/dy`.
/// Accumulates into `grad` and returns `dL/dx` when requested.
pub fn dense_backward<T: Scalar>(
    layer: &Dense<T>,
    x: &[T],
    y: &[T],
    dy: &[T],
    batch: usize,
    grad: &mut DenseGrad<T>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let (ni, no) = (layer.in_dim, layer.out_dim);
    let dz: Vec<T> = dy
        .iter()
        .zip(y)
        .map(|(&d, &o)| d * layer.activation.grad_from_output(o))
        .collect();
    for r in 0..batch {
        for (gb, &d) in grad.b.iter_mut().zip(&dz[r * no..(r + 1) * no]) {
            *gb += d;
        }
    }
    if batch > 0 {
        T::gemm(no, batch, ni, T::one(), &dz, (1, no as isize), x, (ni as isize, 1), T::one(), &mut grad.w, (ni as isize, 1));
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); batch * ni];
    if batch > 0 {
        T::gemm(batch, no, ni, T::one(), &dz, (no as isize, 1), &layer.w, (ni as isize, 1), T::zero(), &mut dx, (ni as isize, 1));
    }
    Some(dx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn tanh(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Linear,
        }
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    pub layers: Vec<Dense<T>>,
}

/// Activations kept from a forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct MlpCache<T: Scalar> {
    pub batch: usize,
    pub acts: Vec<Vec<T>>,
}

impl<T: Scalar> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("cache has at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad<T: Scalar> {
    pub layers: Vec<DenseGrad<T>>,
}

impl<T: Scalar> MlpGrad<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        MlpGrad {
            layers: net.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrad<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseGrad::is_finite)
    }

    pub fn sq_norm(&self) -> T {
        self.layers.iter().fold(T::zero(), |a, l| a + l.sq_norm())
    }
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-initialized hidden layers; the output layer is scaled by
    /// `output_gain` (0 gives an exactly zero output layer).
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, output_gain: f64, rng: &mut R) -> Self {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (ni, no))| {
                if i == last {
                    Dense::init(ni, no, spec.output_activation, output_gain, rng)
                } else {
                    Dense::init(ni, no, spec.hidden_activation, 1.0, rng)
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        Mlp {
            layers: dims
                .into_iter()
                .enumerate()
                .map(|(i, (ni, no))| {
                    let act = if i == last {
                        spec.output_activation
                    } else {
                        spec.hidden_activation
                    };
                    Dense::zeros(ni, no, act)
                })
                .collect(),
        }
    }

    pub fn spec(&self) -> MlpSpec {
        let first = &self.layers[0];
        let last = self.layers.last().expect("non-empty network");
        MlpSpec {
            input: first.in_dim,
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.out_dim)
                .collect(),
            output: last.out_dim,
            hidden_activation: if self.layers.len() > 1 {
                first.activation
            } else {
                Activation::Tanh
            },
            output_activation: last.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Result<(Vec<T>, MlpCache<T>)> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::shape(format!(
                "mlp input has {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut y = Vec::new();
            layer.forward_into(acts.last().expect("input present"), batch, &mut y);
            acts.push(y);
        }
        let y = acts.last().expect("output present").clone();
        Ok((y, MlpCache { batch, acts }))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::shape(format!(
                "mlp input has {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Reverse-mode gradients for every weight and bias, plus `dL/dx`.
    pub fn backward(&self, cache: &MlpCache<T>, dy: &[T]) -> Result<(MlpGrad<T>, Vec<T>)> {
        let mut grads = MlpGrad::zeros_like(self);
        let dx = self.backward_accumulate(cache, dy, &mut grads, true)?;
        Ok((grads, dx.expect("requested")))
    }

    pub fn backward_accumulate(
        &self,
        cache: &MlpCache<T>,
        dy: &[T],
        grads: &mut MlpGrad<T>,
        want_dx: bool,
    ) -> Result<Option<Vec<T>>> {
        let batch = cache.batch;
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::shape("cache does not match network depth"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.acts[i].len() != batch * layer.in_dim
                || cache.acts[i + 1].len() != batch * layer.out_dim
            {
                return Err(Error::shape(format!("stale cache at layer {i}")));
            }
        }
        if dy.len() != batch * self.output_dim() {
            return Err(Error::shape(format!(
                "dL/dy has {} values, expected {}",
                dy.len(),
                batch * self.output_dim()
            )));
        }
        let mut upstream = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let need = want_dx || i > 0;
            let dx = dense_backward(
                &self.layers[i],
                &cache.acts[i],
                &cache.acts[i + 1],
                &upstream,
                batch,
                &mut grads.layers[i],
                need,
            );
            if let Some(d) = dx {
                upstream = d;
            }
        }
        Ok(want_dx.then_some(upstream))
    }

    pub fn apply_update(&mut self, delta: &MlpGrad<T>) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            axpy(T::one(), &d.w, &mut l.w);
            axpy(T::one(), &d.b, &mut l.b);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    w: l.w.iter().map(|v| U::of(v.f64())).collect(),
                    b: l.b.iter().map(|v| U::of(v.f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Flat view of all parameters, layer by layer (`w` then `b`).
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut T {
        for l in &mut self.layers {
            if idx < l.w.len() {
                return &mut l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return &mut l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }
}

impl<T: Scalar> MlpGrad<T> {
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&MlpSpec::tanh(4, &[8, 5], 3));
        let (y, _) = net.forward(&[0.3, -1.0, 2.0, 0.5], 1).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let mut net = Mlp::<f64>::zeros(&MlpSpec::tanh(3, &[], 3));
        for i in 0..3 {
            net.layers[0].w[i * 3 + i] = 1.0;
        }
        let x = [0.25, -3.0, 7.5];
        assert_eq!(net.forward(&x, 1).unwrap().0, x.to_vec());
    }

    #[test]
    fn forward_deterministic_and_batched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f32>::new(&MlpSpec::tanh(5, &[16, 8], 2), 1.0, &mut rng);
        let x: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin()).collect();
        let (a, _) = net.forward(&x, 3).unwrap();
        let (b, _) = net.forward(&x, 3).unwrap();
        assert_eq!(a, b);
        for r in 0..3 {
            let single = net.predict(&x[r * 5..(r + 1) * 5], 1).unwrap();
            assert_eq!(single, a[r * 2..(r + 1) * 2].to_vec());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::<f64>::new(&MlpSpec::tanh(3, &[6], 2), 1.0, &mut rng);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3], 1).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let mut net = Mlp::<f64>::zeros(&MlpSpec::tanh(1, &[], 1));
        net.layers[0].w[0] = 0.7;
        let x = 1.3;
        let (_, cache) = net.forward(&[x], 1).unwrap();
        let (g, dx) = net.backward(&cache, &[2.5]).unwrap();
        assert!((g.layers[0].w[0] - x * 2.5).abs() < 1e-15);
        assert!((g.layers[0].b[0] - 2.5).abs() < 1e-15);
        assert!((dx[0] - 0.7 * 2.5).abs() < 1e-15);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::<f64>::new(&MlpSpec::tanh(3, &[4], 2), 1.0, &mut rng);
        let b = Mlp::<f64>::new(&MlpSpec::tanh(3, &[5], 2), 1.0, &mut rng);
        let (_, cache) = a.forward(&[0.0; 3], 1).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 1.0]), Err(Error::Shape(_))));
        assert!(matches!(a.forward(&[0.0; 4], 1), Err(Error::Shape(_))));
    }
}
