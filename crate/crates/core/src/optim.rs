//! AdamW with decoupled weight decay, and the training loop.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{one_hot, ExampleTable};
use crate::error::{Error, Result};
use crate::model::{
    argmax, backward_with, example_loss, forward_into, BackwardScratch, ForwardCache, Gradients, HyperKinds, LossKind,
    Mode, ModelParams, NormKind,
};
use crate::numkit::{Matrix, Rng};
use crate::spectral::per_neuron_ipr;

/// Reference point for minibatch learning-rate and step scaling.
pub const BASE_BATCH: usize = 256;
pub const BASE_LR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Mini(usize),
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => f.write_str("full"),
            BatchSize::Mini(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(BatchSize::Full);
        }
        match s.parse::<usize>() {
            Ok(b) if b >= 1 => Ok(BatchSize::Mini(b)),
            _ => Err(Error::Config(format!(
                "batch size must be 'full' or a positive integer, got {s:?}"
            ))),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n >= 1 => Ok(BatchSize::Mini(n as usize)),
            Raw::N(n) => Err(serde::de::Error::custom(format!(
                "batch size must be positive, got {n}"
            ))),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: BatchSize,
    pub steps: usize,
    pub eval_every: usize,
    /// Apply weight decay to norm-layer γ and β as well.
    pub decay_norm: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: BatchSize::Full,
            steps: 2000,
            eval_every: 10,
            decay_norm: false,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.batch_size == BatchSize::Mini(0) {
            return bad("batch size must be positive".into());
        }
        Ok(())
    }
}

/// `0.01·√(batch/256)`.
pub fn lr_for_batch(batch_size: usize) -> f64 {
    BASE_LR * (batch_size as f64 / BASE_BATCH as f64).sqrt()
}

/// `round(base_steps · base_batch / batch)`, keeping the number of examples
/// seen constant.
pub fn steps_for_batch(batch_size: usize, base_steps: usize, base_batch: usize) -> usize {
    assert!(batch_size >= 1 && base_batch >= 1);
    (base_steps as f64 * base_batch as f64 / batch_size as f64).round() as usize
}

/// First and second moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let lens = tensor_lens(params);
        OptState {
            t: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

fn tensor_lens(params: &ModelParams) -> Vec<usize> {
    let mut l = vec![
        params.u.as_slice().len(),
        params.v.as_slice().len(),
        params.w.as_slice().len(),
    ];
    if let Some(n) = &params.norm {
        l.push(n.gamma.len());
        l.push(n.beta.len());
    }
    l
}

/// One AdamW update:
/// `θ ← θ·(1 − ηλ) − η·m̂/(√v̂ + ε)`, with bias-corrected moments and `t`
/// incremented first.
pub fn adamw_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptState, cfg: &OptimConfig) -> Result<()> {
    let mut targets: Vec<(&mut [f64], &[f64], bool)> = vec![
        (params.u.as_mut_slice(), grads.u.as_slice(), true),
        (params.v.as_mut_slice(), grads.v.as_slice(), true),
        (params.w.as_mut_slice(), grads.w.as_slice(), true),
    ];
    match (params.norm.as_mut(), &grads.gamma, &grads.beta) {
        (Some(n), Some(dg), Some(db)) => {
            targets.push((&mut n.gamma, dg, cfg.decay_norm));
            targets.push((&mut n.beta, db, cfg.decay_norm));
        }
        (None, None, None) => {}
        _ => return Err(Error::Internal("norm gradients do not match params".into())),
    }
    if targets.len() != state.m.len()
        || targets
            .iter()
            .zip(&state.m)
            .any(|((p, g, _), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::Internal(
            "parameter, gradient and optimizer state shapes differ".into(),
        ));
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = cfg.lr;
    for ((theta, g, decay), (m, v)) in targets.into_iter().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let shrink = if decay { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        for i in 0..theta.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] = theta[i] * shrink - lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

pub const HISTORY_HEADER: [&str; 11] = [
    "step",
    "train_acc",
    "test_acc",
    "train_acc_clean",
    "train_acc_corrupted",
    "train_loss",
    "test_loss",
    "frob_u",
    "frob_v",
    "frob_w",
    "mean_ipr",
];

/// One evaluation. Accuracies on empty subsets are 0. `train_acc` and
/// `train_acc_corrupted` are measured against the assigned (possibly
/// corrupted) labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_acc_clean: f64,
    pub train_acc_corrupted: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub frob_u: f64,
    pub frob_v: f64,
    pub frob_w: f64,
    pub mean_ipr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn max_test_acc(&self) -> f64 {
        self.rows.iter().map(|r| r.test_acc).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(HISTORY_HEADER)?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<TrainHistory> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != HISTORY_HEADER {
            return Err(Error::Format(format!("unexpected history header {header:?}")));
        }
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<HistoryRow>, _>>()?;
        if rows.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Format("history steps are not strictly increasing".into()));
        }
        Ok(TrainHistory { rows })
    }
}

/// Evaluates the model on the whole table in eval mode.
pub fn evaluate(params: &ModelParams, table: &ExampleTable, hyper: &HyperKinds, step: usize) -> Result<HistoryRow> {
    evaluate_with(params, table, hyper, step, &mut ForwardCache::default())
}

/// [`evaluate`] reusing `cache` for the full-table forward pass.
pub fn evaluate_with(
    params: &ModelParams,
    table: &ExampleTable,
    hyper: &HyperKinds,
    step: usize,
    cache: &mut ForwardCache,
) -> Result<HistoryRow> {
    forward_into(params, &table.pairs, Mode::Eval, hyper, None, cache)?;
    let sc = score_table(&cache.logits, table, hyper.loss);
    Ok(HistoryRow {
        step,
        train_acc: sc.train_acc,
        test_acc: sc.test_acc,
        train_acc_clean: sc.train_acc_clean,
        train_acc_corrupted: sc.train_acc_corrupted,
        train_loss: sc.train_loss,
        test_loss: sc.test_loss,
        frob_u: params.u.frobenius_norm(),
        frob_v: params.v.frobenius_norm(),
        frob_w: params.w.frobenius_norm(),
        mean_ipr: per_neuron_ipr(params, 2.0).mean_ipr,
    })
}

/// Accuracy and loss on each subset of a table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_acc_clean: f64,
    pub train_acc_corrupted: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Scores full-table logits (row `i` for example `i`). Train subsets use the
/// assigned labels, the test subset the true labels; empty subsets score 0.
pub fn score_table(logits: &Matrix, table: &ExampleTable, kind: LossKind) -> Scores {
    let subsets = table.subsets();
    let score = |idx: &[usize], labels: &[usize]| -> (f64, f64) {
        if idx.is_empty() {
            return (0.0, 0.0);
        }
        let (mut hits, mut loss) = (0usize, 0.0);
        for &i in idx {
            let row = logits.row(i);
            hits += (argmax(row) == labels[i]) as usize;
            loss += example_loss(row, labels[i], kind);
        }
        (hits as f64 / idx.len() as f64, loss / idx.len() as f64)
    };
    let (train_acc, train_loss) = score(&subsets.train, &table.assigned_labels);
    let (test_acc, test_loss) = score(&subsets.test, &table.true_labels);
    let (train_acc_clean, _) = score(&subsets.train_clean, &table.assigned_labels);
    let (train_acc_corrupted, _) = score(&subsets.train_corrupted, &table.assigned_labels);
    Scores {
        train_acc,
        test_acc,
        train_acc_clean,
        train_acc_corrupted,
        train_loss,
        test_loss,
    }
}

/// Where a run stopped because the loss or the weights went non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub frob_u: f64,
    pub frob_v: f64,
    pub frob_w: f64,
}

impl Divergence {
    pub fn to_error(&self) -> Error {
        Error::NonFinite {
            step: self.step,
            frob_u: self.frob_u,
            frob_v: self.frob_v,
            frob_w: self.frob_w,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub divergence: Option<Divergence>,
}

/// Returned by a training observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Trains from `init` and records an evaluation at step 0, every
/// `eval_every` steps and at the final step.
pub fn train_run(
    table: &ExampleTable,
    init: ModelParams,
    hyper: &HyperKinds,
    cfg: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    train_run_observed(table, init, hyper, cfg, rng, &mut |_, _| Control::Continue)
}

/// As [`train_run`], calling `observer` after every evaluation. Returning
/// [`Control::Stop`] ends the run after that evaluation.
///
/// Minibatches come from a fresh shuffle of the training indices each epoch,
/// the last partial batch included. Under BatchNorm a trailing batch of one
/// example is skipped (batch statistics need two).
pub fn train_run_observed(
    table: &ExampleTable,
    init: ModelParams,
    hyper: &HyperKinds,
    cfg: &OptimConfig,
    rng: &mut Rng,
    observer: &mut dyn FnMut(&HistoryRow, &ModelParams) -> Control,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    init.validate()?;
    if init.p() != table.p() {
        return Err(Error::Config(format!(
            "model modulus {} differs from table modulus {}",
            init.p(),
            table.p()
        )));
    }
    let train_idx = table.subsets().train;
    if train_idx.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let is_bn = init.norm_kind() == Some(NormKind::BatchNorm);
    let smallest_batch = match cfg.batch_size {
        BatchSize::Full => train_idx.len(),
        BatchSize::Mini(b) => b.min(train_idx.len()),
    };
    if is_bn && smallest_batch < 2 {
        return Err(Error::Config("BatchNorm needs at least two examples per batch".into()));
    }
    let mut shuffle_rng = rng.fork("shuffle");
    let mut dropout_rng = rng.fork("dropout");

    let mut params = init;
    let mut state = OptState::new(&params);
    let mut history = TrainHistory::default();

    let full_batch = match cfg.batch_size {
        BatchSize::Full => true,
        BatchSize::Mini(b) => b >= train_idx.len(),
    };
    let (full_pairs, full_targets) = if full_batch {
        let pairs = table.pairs_at(&train_idx);
        let targets = one_hot(&table.assigned_at(&train_idx), table.p())?;
        (pairs, targets)
    } else {
        (Vec::new(), Matrix::zeros(0, 0))
    };
    let mut epoch_order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    let mut cache = ForwardCache::default();
    let mut eval_cache = ForwardCache::default();
    let mut scratch = BackwardScratch::default();
    let row = evaluate_with(&params, table, hyper, 0, &mut eval_cache)?;
    let stop = observer(&row, &params) == Control::Stop;
    history.rows.push(row);
    if stop {
        return Ok(TrainOutcome {
            params,
            history,
            divergence: None,
        });
    }

    let diverged = |params: &ModelParams, step| Divergence {
        step,
        frob_u: params.u.frobenius_norm(),
        frob_v: params.v.frobenius_norm(),
        frob_w: params.w.frobenius_norm(),
    };

    for step in 1..=cfg.steps {
        let owned;
        let (pairs, targets): (&[(usize, usize)], &Matrix) = if full_batch {
            (&full_pairs, &full_targets)
        } else {
            let b = match cfg.batch_size {
                BatchSize::Mini(b) => b,
                BatchSize::Full => unreachable!(),
            };
            loop {
                if cursor >= epoch_order.len() {
                    epoch_order = train_idx.clone();
                    shuffle_rng.shuffle(&mut epoch_order);
                    cursor = 0;
                }
                let end = (cursor + b).min(epoch_order.len());
                if is_bn && end - cursor < 2 {
                    cursor = end;
                    continue;
                }
                let idx = &epoch_order[cursor..end];
                cursor = end;
                owned = (table.pairs_at(idx), one_hot(&table.assigned_at(idx), table.p())?);
                break;
            }
            (&owned.0, &owned.1)
        };

        forward_into(&params, pairs, Mode::Train, hyper, Some(&mut dropout_rng), &mut cache)?;
        if !cache.logits.is_finite() {
            let d = diverged(&params, step);
            return Ok(TrainOutcome {
                params,
                history,
                divergence: Some(d),
            });
        }
        let grads = backward_with(&params, &cache, targets, hyper, &mut scratch)?;
        if let (Some(stats), Some(np)) = (cache.batch_stats(), params.norm.as_mut()) {
            np.absorb(stats);
        }
        adamw_step(&mut params, &grads, &mut state, cfg)?;
        if !(params.u.is_finite() && params.v.is_finite() && params.w.is_finite()) {
            let d = diverged(&params, step);
            return Ok(TrainOutcome {
                params,
                history,
                divergence: Some(d),
            });
        }

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let row = evaluate_with(&params, table, hyper, step, &mut eval_cache)?;
            if !(row.train_loss.is_finite() && row.test_loss.is_finite()) {
                history.rows.push(row);
                let d = diverged(&params, step);
                return Ok(TrainOutcome {
                    params,
                    history,
                    divergence: Some(d),
                });
            }
            let stop = observer(&row, &params) == Control::Stop;
            history.rows.push(row);
            if stop {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        divergence: None,
    })
}
