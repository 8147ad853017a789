//! Two-layer MLP `f(m,n) = W · Drop(Norm(φ(U e_m + V e_n)))`.
//!
//! Batches are handled example-major: hidden activations are `B×N` and
//! logits are `B×p`. One-hot inputs are never materialized; the first layer
//! is a gather of columns of `U` and `V`.

mod checkpoint;
pub mod norm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gaussian_matrix, gemm, Matrix, Rng};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use norm::{BatchStats, NormKind, NormParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Quadratic,
    Relu,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Quadratic => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Activation> {
        match code {
            0 => Some(Activation::Quadratic),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Quadratic => x * x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    #[inline]
    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Quadratic => 2.0 * x,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "ce")]
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperKinds {
    pub activation: Activation,
    pub loss: LossKind,
    pub dropout_p: f64,
}

impl Default for HyperKinds {
    fn default() -> Self {
        HyperKinds {
            activation: Activation::Quadratic,
            loss: LossKind::Mse,
            dropout_p: 0.0,
        }
    }
}

impl HyperKinds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights of the network. `u`, `v` are `N×p`; `w` is `p×N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub u: Matrix,
    pub v: Matrix,
    pub w: Matrix,
    pub norm: Option<NormParams>,
}

impl ModelParams {
    pub fn zeros(p: usize, width: usize, norm: Option<NormKind>) -> Self {
        ModelParams {
            u: Matrix::zeros(width, p),
            v: Matrix::zeros(width, p),
            w: Matrix::zeros(p, width),
            norm: norm.map(|k| NormParams::new(k, width)),
        }
    }

    /// I.i.d. Gaussian weights with standard deviation `std`, drawn U, then
    /// V, then W from one stream. Norm layers start at γ=1, β=0.
    pub fn init_gaussian(p: usize, width: usize, norm: Option<NormKind>, std: f64, rng: &mut Rng) -> Self {
        let u = gaussian_matrix(rng, width, p, std);
        let v = gaussian_matrix(rng, width, p, std);
        let w = gaussian_matrix(rng, p, width, std);
        ModelParams {
            u,
            v,
            w,
            norm: norm.map(|k| NormParams::new(k, width)),
        }
    }

    pub fn width(&self) -> usize {
        self.u.rows()
    }

    pub fn p(&self) -> usize {
        self.u.cols()
    }

    pub fn norm_kind(&self) -> Option<NormKind> {
        self.norm.as_ref().map(|n| n.kind)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.u.shape();
        if n < 1 || p < 2 {
            return Err(Error::Data(format!("invalid model shape N={n}, p={p}")));
        }
        if self.v.shape() != (n, p) || self.w.shape() != (p, n) {
            return Err(Error::Shape {
                op: "ModelParams",
                left: self.v.shape(),
                right: self.w.shape(),
            });
        }
        if let Some(nm) = &self.norm {
            let ok = [&nm.gamma, &nm.beta, &nm.running_mean, &nm.running_var]
                .iter()
                .all(|v| v.len() == n);
            if !ok {
                return Err(Error::Data("norm parameter length differs from width".into()));
            }
            if nm.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::Data("negative running variance".into()));
            }
        }
        Ok(())
    }

    /// Column `k` of `W` (the output weights of hidden neuron `k`).
    pub fn w_col(&self, k: usize) -> Vec<f64> {
        self.w.col(k)
    }

    /// True when every weight attached to neuron `k` is zero.
    pub fn is_dead(&self, k: usize) -> bool {
        self.u.row(k).iter().all(|&x| x == 0.0)
            && self.v.row(k).iter().all(|&x| x == 0.0)
            && (0..self.p()).all(|q| self.w.get(q, k) == 0.0)
    }
}

/// Gradients, shaped like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub u: Matrix,
    pub v: Matrix,
    pub w: Matrix,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub pairs: Vec<(usize, usize)>,
    /// Preactivations `U e_m + V e_n`, `B×N`.
    pub h: Matrix,
    /// Input to the output layer after φ, norm and dropout, `B×N`.
    pub hidden: Matrix,
    /// Dropout mask with entries in `{0, 1/(1-dp)}`, train mode only.
    pub mask: Option<Matrix>,
    /// Logits, `B×p`.
    pub logits: Matrix,
    pub mode: Mode,
    norm: Option<norm::NormCache>,
}

impl Default for ForwardCache {
    fn default() -> Self {
        ForwardCache {
            pairs: Vec::new(),
            h: Matrix::zeros(0, 0),
            hidden: Matrix::zeros(0, 0),
            mask: None,
            logits: Matrix::zeros(0, 0),
            mode: Mode::Eval,
            norm: None,
        }
    }
}

impl ForwardCache {
    /// BatchNorm batch statistics, present after a train-mode pass.
    pub fn batch_stats(&self) -> Option<&BatchStats> {
        self.norm.as_ref().and_then(|c| c.stats.as_ref())
    }
}

fn check_pairs(pairs: &[(usize, usize)], p: usize) -> Result<()> {
    if let Some(&(m, n)) = pairs.iter().find(|&&(m, n)| m >= p || n >= p) {
        return Err(Error::Data(format!("input ({m}, {n}) out of range for p={p}")));
    }
    Ok(())
}

/// Preactivations `h[b] = U[:, m_b] + V[:, n_b]`.
fn preactivations_into(params: &ModelParams, pairs: &[(usize, usize)], h: &mut Matrix) {
    let ut = params.u.transpose();
    let vt = params.v.transpose();
    h.reset_shape(pairs.len(), params.width());
    for (b, &(m, nn)) in pairs.iter().enumerate() {
        let (ur, vr) = (ut.row(m), vt.row(nn));
        for ((o, &x), &y) in h.row_mut(b).iter_mut().zip(ur).zip(vr) {
            *o = x + y;
        }
    }
}

fn output_layer_into(params: &ModelParams, hidden: &Matrix, logits: &mut Matrix) {
    let (b, n) = hidden.shape();
    let p = params.p();
    let wt = params.w.transpose();
    logits.reset_shape(b, p);
    gemm(b, n, p, hidden.as_slice(), wt.as_slice(), logits.as_mut_slice());
}

/// Forward pass. Dropout is applied only in train mode and then needs `rng`.
/// BatchNorm uses batch statistics in train mode and running statistics in
/// eval mode; running statistics are not modified here (see
/// [`ForwardCache::batch_stats`] and [`NormParams::absorb`]).
pub fn forward(
    params: &ModelParams,
    pairs: &[(usize, usize)],
    mode: Mode,
    hyper: &HyperKinds,
    rng: Option<&mut Rng>,
) -> Result<ForwardCache> {
    let mut cache = ForwardCache::default();
    forward_into(params, pairs, mode, hyper, rng, &mut cache)?;
    Ok(cache)
}

/// [`forward`] writing into an existing cache, reusing its buffers. On error
/// the cache contents are unspecified.
pub fn forward_into(
    params: &ModelParams,
    pairs: &[(usize, usize)],
    mode: Mode,
    hyper: &HyperKinds,
    rng: Option<&mut Rng>,
    cache: &mut ForwardCache,
) -> Result<()> {
    hyper.validate()?;
    check_pairs(pairs, params.p())?;
    if mode == Mode::Train && params.norm_kind() == Some(NormKind::BatchNorm) && pairs.len() < 2 {
        return Err(Error::Config(
            "BatchNorm in train mode needs a batch of at least 2".into(),
        ));
    }

    let ForwardCache {
        pairs: cpairs,
        h,
        hidden,
        mask: cmask,
        logits,
        mode: cmode,
        norm: cnorm,
    } = cache;
    cpairs.clear();
    cpairs.extend_from_slice(pairs);
    *cmode = mode;
    preactivations_into(params, pairs, h);
    hidden.reset_shape(h.rows(), h.cols());
    let act = hyper.activation;
    for (o, &x) in hidden.as_mut_slice().iter_mut().zip(h.as_slice()) {
        *o = act.apply(x);
    }

    *cnorm = params
        .norm
        .as_ref()
        .map(|np| norm::forward(np, hidden, mode == Mode::Train));

    *cmask = if mode == Mode::Train && hyper.dropout_p > 0.0 {
        let rng = rng.ok_or_else(|| Error::Config("dropout in train mode requires an rng".into()))?;
        let keep = 1.0 / (1.0 - hyper.dropout_p);
        let mut mask = cmask.take().unwrap_or_else(|| Matrix::zeros(0, 0));
        mask.reset_shape(hidden.rows(), hidden.cols());
        for (mk, x) in mask.as_mut_slice().iter_mut().zip(hidden.as_mut_slice()) {
            if rng.next_f64() >= hyper.dropout_p {
                *mk = keep;
                *x *= keep;
            } else {
                *mk = 0.0;
                *x = 0.0;
            }
        }
        Some(mask)
    } else {
        None
    };

    output_layer_into(params, hidden, logits);
    Ok(())
}

/// Eval-mode logits for a batch; the usual entry point for metrics.
pub fn eval_logits(params: &ModelParams, pairs: &[(usize, usize)], hyper: &HyperKinds) -> Result<Matrix> {
    Ok(forward(params, pairs, Mode::Eval, hyper, None)?.logits)
}

/// Gradient of the loss with respect to the logits.
fn loss_grad_into(logits: &Matrix, targets: &Matrix, kind: LossKind, g: &mut Matrix) {
    let (b, p) = logits.shape();
    g.reset_shape(b, p);
    match kind {
        LossKind::Mse => {
            let scale = 2.0 / (b * p) as f64;
            for ((o, &f), &y) in g
                .as_mut_slice()
                .iter_mut()
                .zip(logits.as_slice())
                .zip(targets.as_slice())
            {
                *o = scale * (f - y);
            }
        }
        LossKind::CrossEntropy => {
            let inv_b = 1.0 / b as f64;
            for i in 0..b {
                let sm = softmax(logits.row(i));
                let ysum: f64 = targets.row(i).iter().sum();
                for ((o, s), &y) in g.row_mut(i).iter_mut().zip(sm).zip(targets.row(i)) {
                    *o = inv_b * (s * ysum - y);
                }
            }
        }
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// MSE is `(1/(B·p)) Σ (f-y)²`; cross entropy is the batch mean of
/// `-Σ_q y_q log softmax(f)_q`.
pub fn loss(logits: &Matrix, targets: &Matrix, kind: LossKind) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "loss",
            left: logits.shape(),
            right: targets.shape(),
        });
    }
    let (b, p) = logits.shape();
    if b == 0 {
        return Ok(0.0);
    }
    Ok(match kind {
        LossKind::Mse => {
            let s: f64 = logits
                .as_slice()
                .iter()
                .zip(targets.as_slice())
                .map(|(f, y)| (f - y) * (f - y))
                .sum();
            s / (b * p) as f64
        }
        LossKind::CrossEntropy => {
            let mut s = 0.0;
            for i in 0..b {
                let ls = log_softmax(logits.row(i));
                s -= ls.iter().zip(targets.row(i)).map(|(l, y)| l * y).sum::<f64>();
            }
            s / b as f64
        }
    })
}

/// Loss of a single example (one logit row) against an integer label.
pub fn example_loss(row: &[f64], label: usize, kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => {
            let s: f64 = row
                .iter()
                .enumerate()
                .map(|(q, &f)| {
                    let d = if q == label { f - 1.0 } else { f };
                    d * d
                })
                .sum();
            s / row.len() as f64
        }
        LossKind::CrossEntropy => -log_softmax(row)[label],
    }
}

/// Loss against integer labels, without building the one-hot matrix.
pub fn loss_for_labels(logits: &Matrix, labels: &[usize], kind: LossKind) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let s: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| example_loss(logits.row(i), l, kind))
        .sum();
    s / labels.len() as f64
}

/// Reusable buffers for [`backward_with`].
#[derive(Clone, Debug)]
pub struct BackwardScratch {
    g: Matrix,
    gt: Matrix,
    dz: Matrix,
}

impl Default for BackwardScratch {
    fn default() -> Self {
        BackwardScratch {
            g: Matrix::zeros(0, 0),
            gt: Matrix::zeros(0, 0),
            dz: Matrix::zeros(0, 0),
        }
    }
}

/// Backward pass from a matching forward cache against one-hot targets.
pub fn backward(params: &ModelParams, cache: &ForwardCache, targets: &Matrix, hyper: &HyperKinds) -> Result<Gradients> {
    backward_with(params, cache, targets, hyper, &mut BackwardScratch::default())
}

/// [`backward`] with caller-owned scratch buffers.
pub fn backward_with(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &Matrix,
    hyper: &HyperKinds,
    scratch: &mut BackwardScratch,
) -> Result<Gradients> {
    let (b, n, p) = (cache.h.rows(), params.width(), params.p());
    if cache.h.cols() != n || cache.logits.cols() != p || targets.shape() != (b, p) {
        return Err(Error::Internal(format!(
            "cache/params mismatch: cache {}x{}, logits {:?}, targets {:?}, params N={n} p={p}",
            b,
            cache.h.cols(),
            cache.logits.shape(),
            targets.shape()
        )));
    }
    if cache.norm.is_some() != params.norm.is_some() {
        return Err(Error::Internal(
            "norm layer presence differs between cache and params".into(),
        ));
    }

    let BackwardScratch { g, gt, dz } = scratch;
    loss_grad_into(&cache.logits, targets, hyper.loss, g);

    // dW = Gᵀ · hidden
    gt.reset_shape(p, b);
    for i in 0..b {
        for (q, &x) in g.row(i).iter().enumerate() {
            gt.as_mut_slice()[q * b + i] = x;
        }
    }
    let mut dw = Matrix::zeros(p, n);
    gemm(p, b, n, gt.as_slice(), cache.hidden.as_slice(), dw.as_mut_slice());

    // d(hidden) = G · W
    dz.reset_shape(b, n);
    gemm(b, p, n, g.as_slice(), params.w.as_slice(), dz.as_mut_slice());

    if let Some(mask) = &cache.mask {
        for (d, &m) in dz.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *d *= m;
        }
    }

    let (dgamma, dbeta) = match (&params.norm, &cache.norm) {
        (Some(np), Some(nc)) => {
            let (dg, db) = norm::backward(np, nc, dz);
            (Some(dg), Some(db))
        }
        _ => (None, None),
    };

    let act = hyper.activation;
    for (d, &x) in dz.as_mut_slice().iter_mut().zip(cache.h.as_slice()) {
        *d *= act.grad(x);
    }

    // Scatter rows of dH into the gathered columns, in batch order.
    let mut dut = Matrix::zeros(p, n);
    let mut dvt = Matrix::zeros(p, n);
    for (bi, &(m, nn)) in cache.pairs.iter().enumerate() {
        let row = dz.row(bi);
        for (o, &x) in dut.row_mut(m).iter_mut().zip(row) {
            *o += x;
        }
        for (o, &x) in dvt.row_mut(nn).iter_mut().zip(row) {
            *o += x;
        }
    }

    Ok(Gradients {
        u: dut.transpose(),
        v: dvt.transpose(),
        w: dw,
        gamma: dgamma,
        beta: dbeta,
    })
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (q, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = q;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label (ties to the lowest
/// index). Empty input gives 0.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}
