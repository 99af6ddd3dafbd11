//! History encoder and dynamics-aware world model trained by autoregressive rollout.

use crate::error::{Error, Result};
use crate::netcore::{Mlp, MlpCache, MlpGrad, Scalar};

pub const EMBED_DIM: usize = 32;

/// Layout of a batch of windows: `batch × (h + 1 + n) × (state + action)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShape {
    pub h: usize,
    pub n: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl WindowShape {
    pub fn pair_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn len(&self) -> usize {
        self.h + 1 + self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_size(&self) -> usize {
        self.len() * self.pair_dim()
    }

    fn check(&self, windows: usize, batch: usize) -> Result<()> {
        if batch == 0 || !windows.is_multiple_of(batch) {
            return Err(Error::shape("window batch is empty or ragged"));
        }
        let per = windows / batch;
        if per < self.window_size() {
            return Err(Error::domain(format!(
                "window holds {} pairs, need {}",
                per / self.pair_dim().max(1),
                self.len()
            )));
        }
        if per != self.window_size() {
            return Err(Error::shape(format!(
                "window holds {per} values, expected {}",
                self.window_size()
            )));
        }
        Ok(())
    }
}

/// `e = φ(flatten(h))` for a batch of padded histories.
pub fn encode_history<T: Scalar>(phi: &Mlp<T>, histories: &[T], batch: usize) -> Result<Vec<T>> {
    phi.predict(histories, batch)
}

/// One residual prediction `ŝ' = ŝ + ω(ŝ, a, e)` for a batch.
pub fn wm_step<T: Scalar>(omega: &Mlp<T>, s_hat: &[T], a: &[T], e: &[T], batch: usize) -> Result<Vec<T>> {
    let x = concat_rows(&[s_hat, a, e], batch)?;
    let d = omega.predict(&x, batch)?;
    if d.len() != s_hat.len() {
        return Err(Error::shape("world model output does not match the state size"));
    }
    Ok(s_hat.iter().zip(&d).map(|(&s, &v)| s + v).collect())
}

/// Row-wise concatenation of batch-major blocks.
pub fn concat_rows<T: Scalar>(parts: &[&[T]], batch: usize) -> Result<Vec<T>> {
    if batch == 0 {
        return Ok(Vec::new());
    }
    let dims: Vec<usize> = parts.iter().map(|p| p.len() / batch).collect();
    if parts.iter().zip(&dims).any(|(p, &d)| p.len() != d * batch) {
        return Err(Error::shape("ragged blocks in row concatenation"));
    }
    let mut out = Vec::with_capacity(dims.iter().sum::<usize>() * batch);
    for r in 0..batch {
        for (p, &d) in parts.iter().zip(&dims) {
            out.extend_from_slice(&p[r * d..(r + 1) * d]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WmLoss<T: Scalar> {
    /// Mean over windows of the summed per-step L1 errors.
    pub loss: f64,
    /// Mean L1 error at each horizon step `1..=n`.
    pub per_step: Vec<f64>,
    pub phi_grad: Option<MlpGrad<T>>,
    pub omega_grad: Option<MlpGrad<T>>,
}

/// Autoregressive world-model loss over a batch of windows.
///
/// The embedding is recomputed before every prediction from the most recent
/// `h` pairs, with predicted states standing in for the ones after `s_t`.
pub fn wm_loss<T: Scalar>(
    phi: &Mlp<T>,
    omega: &Mlp<T>,
    windows: &[T],
    batch: usize,
    shape: WindowShape,
    want_grad: bool,
) -> Result<WmLoss<T>> {
    shape.check(windows.len(), batch)?;
    let WindowShape { h, n, state_dim: sd, action_dim: ad } = shape;
    let pd = sd + ad;
    let ws = shape.window_size();
    if phi.input_dim() != h * pd {
        return Err(Error::shape(format!(
            "encoder takes {} inputs, history has {}",
            phi.input_dim(),
            h * pd
        )));
    }
    let ed = phi.output_dim();
    if omega.input_dim() != sd + ad + ed || omega.output_dim() != sd {
        return Err(Error::shape("world model dimensions do not match state, action and embedding"));
    }
    let pair = |b: usize, j: usize| &windows[b * ws + j * pd..b * ws + (j + 1) * pd];
    // preds[k] holds ŝ_{t+k} for every window; preds[0] is the true s_t.
    let mut preds: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    preds.push((0..batch).flat_map(|b| pair(b, h)[..sd].to_vec()).collect());
    let mut phi_caches: Vec<MlpCache<T>> = Vec::new();
    let mut omega_caches: Vec<MlpCache<T>> = Vec::new();
    let mut hist = Vec::with_capacity(batch * h * pd);
    let mut x = Vec::with_capacity(batch * omega.input_dim());
    for i in 0..n {
        hist.clear();
        for b in 0..batch {
            for p in 0..h {
                let j = i + p;
                let pr = pair(b, j);
                if j > h {
                    let k = j - h;
                    hist.extend_from_slice(&preds[k][b * sd..(b + 1) * sd]);
                } else {
                    hist.extend_from_slice(&pr[..sd]);
                }
                hist.extend_from_slice(&pr[sd..]);
            }
        }
        let e = if want_grad {
            let (e, c) = phi.forward(&hist, batch)?;
            phi_caches.push(c);
            e
        } else {
            phi.predict(&hist, batch)?
        };
        x.clear();
        for b in 0..batch {
            x.extend_from_slice(&preds[i][b * sd..(b + 1) * sd]);
            x.extend_from_slice(&pair(b, h + i)[sd..]);
            x.extend_from_slice(&e[b * ed..(b + 1) * ed]);
        }
        let d = if want_grad {
            let (d, c) = omega.forward(&x, batch)?;
            omega_caches.push(c);
            d
        } else {
            omega.predict(&x, batch)?
        };
        let next: Vec<T> = preds[i].iter().zip(&d).map(|(&s, &v)| s + v).collect();
        preds.push(next);
    }
    let inv = 1.0 / batch as f64;
    let mut per_step = vec![0.0; n];
    for k in 1..=n {
        let mut acc = 0.0;
        for b in 0..batch {
            let truth = &pair(b, h + k)[..sd];
            let pred = &preds[k][b * sd..(b + 1) * sd];
            acc += truth.iter().zip(pred).map(|(&t, &p)| (t - p).f64().abs()).sum::<f64>();
        }
        per_step[k - 1] = acc * inv;
    }
    let loss = per_step.iter().sum();
    if !want_grad {
        return Ok(WmLoss {
            loss,
            per_step,
            phi_grad: None,
            omega_grad: None,
        });
    }
    let mut d_pred: Vec<Vec<T>> = (0..=n).map(|_| vec![T::zero(); batch * sd]).collect();
    let scale = T::of(inv);
    for k in 1..=n {
        for b in 0..batch {
            let truth = &pair(b, h + k)[..sd];
            for s in 0..sd {
                let diff = preds[k][b * sd + s] - truth[s];
                let g = if diff > T::zero() {
                    scale
                } else if diff < T::zero() {
                    -scale
                } else {
                    T::zero()
                };
                d_pred[k][b * sd + s] += g;
            }
        }
    }
    let mut g_phi = MlpGrad::zeros_like(phi);
    let mut g_omega = MlpGrad::zeros_like(omega);
    let xd = omega.input_dim();
    for i in (0..n).rev() {
        let d_next = d_pred[i + 1].clone();
        if i > 0 {
            for (a, &b) in d_pred[i].iter_mut().zip(&d_next) {
                *a += b;
            }
        }
        let dx = omega
            .backward_accumulate(&omega_caches[i], &d_next, &mut g_omega, true)?
            .expect("requested");
        let mut de = Vec::with_capacity(batch * ed);
        for b in 0..batch {
            let row = &dx[b * xd..(b + 1) * xd];
            if i > 0 {
                for s in 0..sd {
                    d_pred[i][b * sd + s] += row[s];
                }
            }
            de.extend_from_slice(&row[sd + ad..]);
        }
        let dh = phi
            .backward_accumulate(&phi_caches[i], &de, &mut g_phi, true)?
            .expect("requested");
        for p in 0..h {
            let j = i + p;
            if j <= h {
                continue;
            }
            let k = j - h;
            for b in 0..batch {
                let src = &dh[b * h * pd + p * pd..b * h * pd + p * pd + sd];
                for s in 0..sd {
                    d_pred[k][b * sd + s] += src[s];
                }
            }
        }
    }
    Ok(WmLoss {
        loss,
        per_step,
        phi_grad: Some(g_phi),
        omega_grad: Some(g_omega),
    })
}

/// The loss a predictor that repeats `s_t` would incur, averaged over windows.
pub fn persistence_loss<T: Scalar>(windows: &[T], batch: usize, shape: WindowShape) -> Result<WmLoss<T>> {
    shape.check(windows.len(), batch)?;
    let WindowShape { h, n, state_dim: sd, .. } = shape;
    let pd = shape.pair_dim();
    let ws = shape.window_size();
    let mut per_step = vec![0.0; n];
    for b in 0..batch {
        let base = &windows[b * ws + h * pd..b * ws + h * pd + sd];
        for k in 1..=n {
            let s = &windows[b * ws + (h + k) * pd..b * ws + (h + k) * pd + sd];
            per_step[k - 1] += s.iter().zip(base).map(|(&x, &y)| (x - y).f64().abs()).sum::<f64>() / batch as f64;
        }
    }
    Ok(WmLoss {
        loss: per_step.iter().sum(),
        per_step,
        phi_grad: None,
        omega_grad: None,
    })
}
