//! Neuron pruning in IPR order.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ExampleTable;
use crate::error::{Error, Result};
use crate::model::{forward_into, ForwardCache, HyperKinds, Mode, ModelParams};
use crate::optim::score_table;
use crate::spectral::{per_neuron_ipr, IprReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneOrder {
    #[serde(rename = "low")]
    LowFirst,
    #[serde(rename = "high")]
    HighFirst,
}

impl std::fmt::Display for PruneOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruneOrder::LowFirst => "low",
            PruneOrder::HighFirst => "high",
        })
    }
}

impl FromStr for PruneOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" | "low-first" => Ok(PruneOrder::LowFirst),
            "high" | "high-first" => Ok(PruneOrder::HighFirst),
            _ => Err(Error::Config(format!(
                "unknown prune order {s:?} (expected low or high)"
            ))),
        }
    }
}

/// Zeroes row `k` of `U` and `V`, column `k` of `W`, and `γ_k`, `β_k`.
/// Running statistics are left alone.
pub fn prune_neuron(params: &mut ModelParams, k: usize) -> Result<()> {
    let n = params.width();
    if k >= n {
        return Err(Error::Data(format!("neuron {k} out of range for width {n}")));
    }
    params.u.row_mut(k).fill(0.0);
    params.v.row_mut(k).fill(0.0);
    for q in 0..params.p() {
        params.w.set(q, k, 0.0);
    }
    if let Some(np) = params.norm.as_mut() {
        np.gamma[k] = 0.0;
        np.beta[k] = 0.0;
    }
    Ok(())
}

/// Neuron indices in pruning order: live neurons by combined IPR (ascending
/// for `LowFirst`, descending for `HighFirst`, ties by index), then dead ones.
pub fn pruning_order(report: &IprReport, order: PruneOrder) -> Vec<usize> {
    let mut live: Vec<(usize, f64)> = report.live().collect();
    live.sort_by(|a, b| {
        let c = a.1.total_cmp(&b.1);
        let c = if order == PruneOrder::HighFirst { c.reverse() } else { c };
        c.then(a.0.cmp(&b.0))
    });
    let mut out: Vec<usize> = live.into_iter().map(|(k, _)| k).collect();
    out.extend(
        report
            .per_neuron
            .iter()
            .enumerate()
            .filter(|(_, n)| n.dead())
            .map(|(k, _)| k),
    );
    out
}

pub const PRUNE_HEADER: [&str; 7] = [
    "pruned_count",
    "test_acc",
    "train_acc",
    "clean_train_acc",
    "corrupted_train_acc",
    "train_loss",
    "test_loss",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub pruned_count: usize,
    pub test_acc: f64,
    pub train_acc: f64,
    pub clean_train_acc: f64,
    pub corrupted_train_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneTrace {
    pub order: PruneOrder,
    /// The neuron removed at each step, in order.
    pub sequence: Vec<usize>,
    pub rows: Vec<PruneRow>,
}

impl PruneTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(PRUNE_HEADER)?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn measure(
    params: &ModelParams,
    table: &ExampleTable,
    hyper: &HyperKinds,
    count: usize,
    cache: &mut ForwardCache,
) -> Result<PruneRow> {
    forward_into(params, &table.pairs, Mode::Eval, hyper, None, cache)?;
    let s = score_table(&cache.logits, table, hyper.loss);
    Ok(PruneRow {
        pruned_count: count,
        test_acc: s.test_acc,
        train_acc: s.train_acc,
        clean_train_acc: s.train_acc_clean,
        corrupted_train_acc: s.train_acc_corrupted,
        train_loss: s.train_loss,
        test_loss: s.test_loss,
    })
}

/// Prunes one neuron at a time in the order fixed by the unpruned model's
/// IPR, recording metrics at counts `0, every, 2·every, …` and always at `N`.
pub fn prune_sweep(
    params: &ModelParams,
    table: &ExampleTable,
    hyper: &HyperKinds,
    order: PruneOrder,
    every: usize,
) -> Result<PruneTrace> {
    if every == 0 {
        return Err(Error::Config("evaluation stride must be positive".into()));
    }
    let sequence = pruning_order(&per_neuron_ipr(params, 2.0), order);
    let n = sequence.len();
    let mut work = params.clone();
    let mut cache = ForwardCache::default();
    let mut rows = vec![measure(&work, table, hyper, 0, &mut cache)?];
    for (c, &k) in sequence.iter().enumerate() {
        prune_neuron(&mut work, k)?;
        let count = c + 1;
        if count % every == 0 || count == n {
            rows.push(measure(&work, table, hyper, count, &mut cache)?);
        }
    }
    Ok(PruneTrace { order, sequence, rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MaxPrunable {
    pub count: usize,
    pub survivors: usize,
    /// The unpruned model was already below the floor.
    pub below_floor: bool,
}

/// Longest prefix of the low-IPR-first order that can be pruned with test
/// accuracy staying at or above `floor` at every count along the way.
pub fn max_prunable(params: &ModelParams, table: &ExampleTable, hyper: &HyperKinds, floor: f64) -> Result<MaxPrunable> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::Config(format!("floor must lie in [0, 1], got {floor}")));
    }
    let sequence = pruning_order(&per_neuron_ipr(params, 2.0), PruneOrder::LowFirst);
    let n = sequence.len();
    let mut work = params.clone();
    let mut cache = ForwardCache::default();
    if measure(&work, table, hyper, 0, &mut cache)?.test_acc < floor {
        return Ok(MaxPrunable {
            count: 0,
            survivors: n,
            below_floor: true,
        });
    }
    let mut count = 0;
    for &k in &sequence {
        prune_neuron(&mut work, k)?;
        if measure(&work, table, hyper, count + 1, &mut cache)?.test_acc < floor {
            break;
        }
        count += 1;
    }
    Ok(MaxPrunable {
        count,
        survivors: n - count,
        below_floor: false,
    })
}
