//! Post-activation normalization (BatchNorm over the batch axis, LayerNorm
//! over the hidden axis). Activations are `B×N`, row per example.

use serde::{Deserialize, Serialize};

use crate::numkit::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[serde(rename = "bn")]
    BatchNorm,
    #[serde(rename = "ln")]
    LayerNorm,
}

impl NormKind {
    pub fn code(kind: Option<NormKind>) -> u32 {
        match kind {
            None => 0,
            Some(NormKind::BatchNorm) => 1,
            Some(NormKind::LayerNorm) => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Option<NormKind>> {
        match code {
            0 => Some(None),
            1 => Some(Some(NormKind::BatchNorm)),
            2 => Some(Some(NormKind::LayerNorm)),
            _ => None,
        }
    }
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub kind: NormKind,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl NormParams {
    pub fn new(kind: NormKind, width: usize) -> Self {
        NormParams {
            kind,
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Folds batch statistics into the running estimates. The variance
    /// estimate uses the unbiased `B/(B-1)` correction.
    pub fn absorb(&mut self, stats: &BatchStats) {
        if self.kind != NormKind::BatchNorm {
            return;
        }
        let b = stats.batch as f64;
        let corr = if stats.batch > 1 { b / (b - 1.0) } else { 1.0 };
        let mom = self.momentum;
        for k in 0..self.width() {
            self.running_mean[k] = (1.0 - mom) * self.running_mean[k] + mom * stats.mean[k];
            self.running_var[k] = (1.0 - mom) * self.running_var[k] + mom * stats.var[k] * corr;
        }
    }
}

/// Biased per-neuron batch statistics from a BatchNorm train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub batch: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Output of a normalization pass, enough to run it backwards.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub xhat: Matrix,
    /// `1/sqrt(var+eps)`: per neuron for BatchNorm, per example for LayerNorm.
    pub inv_std: Vec<f64>,
    pub stats: Option<BatchStats>,
}

/// Normalizes `a` in place (result is `γ·x̂ + β`) and returns the cache.
/// `use_batch_stats` selects batch statistics (BatchNorm train mode) over
/// running statistics.
pub(crate) fn forward(norm: &NormParams, a: &mut Matrix, use_batch_stats: bool) -> NormCache {
    let (b, n) = a.shape();
    let eps = norm.epsilon;
    match norm.kind {
        NormKind::BatchNorm => {
            let (mean, var, stats) = if use_batch_stats {
                let mut mean = vec![0.0; n];
                for i in 0..b {
                    for (m, &x) in mean.iter_mut().zip(a.row(i)) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; n];
                for i in 0..b {
                    for ((v, &x), &m) in var.iter_mut().zip(a.row(i)).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= b as f64);
                let stats = BatchStats {
                    batch: b,
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            } else {
                (norm.running_mean.clone(), norm.running_var.clone(), None)
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = Matrix::zeros(b, n);
            for i in 0..b {
                let xr = xhat.row_mut(i);
                let ar = a.row(i);
                for k in 0..n {
                    xr[k] = (ar[k] - mean[k]) * inv_std[k];
                }
            }
            apply_affine(norm, &xhat, a);
            NormCache { xhat, inv_std, stats }
        }
        NormKind::LayerNorm => {
            let mut xhat = Matrix::zeros(b, n);
            let mut inv_std = Vec::with_capacity(b);
            for i in 0..b {
                let ar = a.row(i);
                let mean = ar.iter().sum::<f64>() / n as f64;
                let var = ar.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for (x, &av) in xhat.row_mut(i).iter_mut().zip(ar) {
                    *x = (av - mean) * is;
                }
            }
            apply_affine(norm, &xhat, a);
            NormCache {
                xhat,
                inv_std,
                stats: None,
            }
        }
    }
}

fn apply_affine(norm: &NormParams, xhat: &Matrix, out: &mut Matrix) {
    for i in 0..xhat.rows() {
        let xr = xhat.row(i);
        for (k, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = norm.gamma[k] * xr[k] + norm.beta[k];
        }
    }
}

/// Backward through `γ·x̂ + β`. Overwrites `dy` with the gradient w.r.t. the
/// normalization input and returns `(dγ, dβ)`.
///
/// With running statistics (eval mode) the normalization is affine in its
/// input, so only the `γ·inv_std` scaling is applied.
pub(crate) fn backward(norm: &NormParams, cache: &NormCache, dy: &mut Matrix) -> (Vec<f64>, Vec<f64>) {
    let (b, n) = dy.shape();
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    for i in 0..b {
        let xr = cache.xhat.row(i);
        for (k, &g) in dy.row(i).iter().enumerate() {
            dgamma[k] += g * xr[k];
            dbeta[k] += g;
        }
    }
    // dy <- dx̂ = dy·γ
    for i in 0..b {
        for (k, g) in dy.row_mut(i).iter_mut().enumerate() {
            *g *= norm.gamma[k];
        }
    }
    match (norm.kind, cache.stats.is_some()) {
        (NormKind::BatchNorm, true) => {
            let bf = b as f64;
            let mut sum = vec![0.0; n];
            let mut sum_x = vec![0.0; n];
            for i in 0..b {
                let xr = cache.xhat.row(i);
                for (k, &g) in dy.row(i).iter().enumerate() {
                    sum[k] += g;
                    sum_x[k] += g * xr[k];
                }
            }
            for i in 0..b {
                let xr = cache.xhat.row(i);
                for (k, g) in dy.row_mut(i).iter_mut().enumerate() {
                    *g = cache.inv_std[k] / bf * (bf * *g - sum[k] - xr[k] * sum_x[k]);
                }
            }
        }
        (NormKind::BatchNorm, false) => {
            for i in 0..b {
                for (k, g) in dy.row_mut(i).iter_mut().enumerate() {
                    *g *= cache.inv_std[k];
                }
            }
        }
        (NormKind::LayerNorm, _) => {
            let nf = n as f64;
            for i in 0..b {
                let xr = cache.xhat.row(i);
                let is = cache.inv_std[i];
                let row = dy.row_mut(i);
                let s: f64 = row.iter().sum();
                let sx: f64 = row.iter().zip(xr).map(|(g, x)| g * x).sum();
                for (g, &x) in row.iter_mut().zip(xr) {
                    *g = is / nf * (nf * *g - s - x * sx);
                }
            }
        }
    }
    (dgamma, dbeta)
}
