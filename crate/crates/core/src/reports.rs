//! Post-hoc analyses: logit peaks on corrupted examples and projections of
//! training histories.

use std::io::Write;

use serde::Serialize;

use crate::dataset::ExampleTable;
use crate::error::{Error, Result};
use crate::model::{eval_logits, HyperKinds, ModelParams};
use crate::numkit::Rng;
use crate::optim::TrainHistory;

pub const DEFAULT_LOGIT_EXAMPLES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogitRow {
    pub index: usize,
    pub m: usize,
    pub n: usize,
    pub true_label: usize,
    pub corrupted_label: usize,
    pub logit_at_true: f64,
    pub logit_at_corrupted: f64,
    /// Largest logit over all labels other than the two above.
    pub max_other_logit: f64,
}

impl LogitRow {
    pub fn true_wins(&self) -> bool {
        self.logit_at_true > self.logit_at_corrupted
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LogitReport {
    pub rows: Vec<LogitRow>,
    /// Set when the table has no corrupted training examples.
    pub empty: bool,
}

const LOGIT_HEADER: [&str; 8] = [
    "index",
    "m",
    "n",
    "true_label",
    "corrupted_label",
    "logit_at_true",
    "logit_at_corrupted",
    "max_other_logit",
];

impl LogitReport {
    pub fn fraction_true_wins(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.true_wins()).count() as f64 / self.rows.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(LOGIT_HEADER)?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Samples `k` corrupted training examples without replacement (all of them
/// if fewer exist) and records their logits at the true and assigned labels.
pub fn logit_report(
    params: &ModelParams,
    table: &ExampleTable,
    hyper: &HyperKinds,
    k: usize,
    rng: &mut Rng,
) -> Result<LogitReport> {
    if k == 0 {
        return Err(Error::Config("logit report needs at least one example".into()));
    }
    let mut pool = table.subsets().train_corrupted;
    if pool.is_empty() {
        return Ok(LogitReport {
            rows: Vec::new(),
            empty: true,
        });
    }
    let take = k.min(pool.len());
    // partial Fisher-Yates
    for i in 0..take {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(take);
    let logits = eval_logits(params, &table.pairs_at(&pool), hyper)?;
    let rows = pool
        .iter()
        .enumerate()
        .map(|(r, &idx)| {
            let row = logits.row(r);
            let t = table.true_labels[idx];
            let c = table.assigned_labels[idx];
            let max_other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != t && j != c)
                .map(|(_, &x)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let (m, n) = table.pairs[idx];
            LogitRow {
                index: idx,
                m,
                n,
                true_label: t,
                corrupted_label: c,
                logit_at_true: row[t],
                logit_at_corrupted: row[c],
                max_other_logit: max_other,
            }
        })
        .collect();
    Ok(LogitReport { rows, empty: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormPoint {
    pub step: usize,
    pub frob_u: f64,
    pub frob_v: f64,
    pub frob_w: f64,
}

pub fn norm_series(history: &TrainHistory) -> Vec<NormPoint> {
    history
        .rows
        .iter()
        .map(|r| NormPoint {
            step: r.step,
            frob_u: r.frob_u,
            frob_v: r.frob_v,
            frob_w: r.frob_w,
        })
        .collect()
}

/// Final norm of each matrix divided by its peak over the series.
/// A zero peak gives a ratio of 0.
pub fn final_to_peak(series: &[NormPoint]) -> Option<[f64; 3]> {
    let last = series.last()?;
    let ratio = |get: fn(&NormPoint) -> f64| {
        let peak = series.iter().map(get).fold(0.0, f64::max);
        if peak > 0.0 {
            get(last) / peak
        } else {
            0.0
        }
    };
    Some([ratio(|p| p.frob_u), ratio(|p| p.frob_v), ratio(|p| p.frob_w)])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IprSeries {
    pub steps: Vec<usize>,
    pub mean_ipr: Vec<f64>,
    /// Fraction of consecutive checkpoint pairs where the mean IPR went down.
    pub fraction_decreasing: f64,
}

impl IprSeries {
    pub fn rise(&self) -> Option<f64> {
        Some(self.mean_ipr.last()? - self.mean_ipr.first()?)
    }
}

pub fn ipr_series(history: &TrainHistory) -> IprSeries {
    let steps = history.rows.iter().map(|r| r.step).collect();
    let mean_ipr: Vec<f64> = history.rows.iter().map(|r| r.mean_ipr).collect();
    let pairs = mean_ipr.len().saturating_sub(1);
    let down = mean_ipr.windows(2).filter(|w| w[1] < w[0]).count();
    IprSeries {
        steps,
        fraction_decreasing: if pairs == 0 { 0.0 } else { down as f64 / pairs as f64 },
        mean_ipr,
    }
}

pub fn write_norm_csv<W: Write>(series: &[NormPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in series {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ipr_csv<W: Write>(series: &IprSeries, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "mean_ipr"])?;
    for (s, v) in series.steps.iter().zip(&series.mean_ipr) {
        out.write_record([s.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{build_analytic_params, AnalyticSpec, FrequencyAssignment};
    use crate::dataset::{generate_table, TaskSpec};
    use crate::model::ModelParams;
    use crate::optim::{train_run, HistoryRow, OptimConfig};

    fn table(p: usize, alpha: f64, xi: f64, seed: u64) -> ExampleTable {
        let root = Rng::new(seed);
        generate_table(TaskSpec::new(crate::dataset::Op::Add, p).unwrap())
            .unwrap()
            .split(alpha, &mut root.fork("data"))
            .unwrap()
            .corrupt(xi, &mut root.fork("corruption"))
            .unwrap()
    }

    #[test]
    fn logits_match_fresh_forward() {
        let t = table(11, 0.6, 0.4, 3);
        let params = ModelParams::init_gaussian(11, 16, None, 0.1, &mut Rng::new(9));
        let hyper = HyperKinds::default();
        let rep = logit_report(&params, &t, &hyper, 4, &mut Rng::new(1)).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert!(!rep.empty);
        for r in &rep.rows {
            assert!(t.corrupted[r.index] && t.in_train[r.index]);
            assert_ne!(r.true_label, r.corrupted_label);
            let fresh = eval_logits(&params, &[(r.m, r.n)], &hyper).unwrap();
            assert_eq!(fresh.row(0)[r.true_label].to_bits(), r.logit_at_true.to_bits());
            assert_eq!(
                fresh.row(0)[r.corrupted_label].to_bits(),
                r.logit_at_corrupted.to_bits()
            );
        }
        let mut seen: Vec<_> = rep.rows.iter().map(|r| r.index).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn clean_table_is_empty() {
        let t = table(7, 0.5, 0.0, 1);
        let params = ModelParams::init_gaussian(7, 4, None, 0.1, &mut Rng::new(2));
        let rep = logit_report(&params, &t, &HyperKinds::default(), 4, &mut Rng::new(1)).unwrap();
        assert!(rep.empty && rep.rows.is_empty());
        assert!(logit_report(&params, &t, &HyperKinds::default(), 0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn analytic_model_prefers_true_label() {
        let p = 23;
        let spec = AnalyticSpec::random(p, 200, FrequencyAssignment::Permutation, &mut Rng::new(4)).unwrap();
        let params = build_analytic_params(&spec).unwrap();
        let t = table(p, 0.5, 0.3, 2);
        let rep = logit_report(&params, &t, &HyperKinds::default(), 50, &mut Rng::new(5)).unwrap();
        assert_eq!(rep.fraction_true_wins(), 1.0);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 51);
        let mut json = Vec::new();
        rep.write_json(&mut json).unwrap();
        assert!(String::from_utf8(json).unwrap().contains("\"logit_at_true\""));
    }

    #[test]
    fn frozen_run_series_constant() {
        let t = table(7, 0.5, 0.2, 6);
        let init = ModelParams::init_gaussian(7, 8, None, 0.1, &mut Rng::new(3));
        let cfg = OptimConfig {
            lr: 0.0,
            steps: 30,
            ..OptimConfig::default()
        };
        let out = train_run(&t, init, &HyperKinds::default(), &cfg, &mut Rng::new(1)).unwrap();
        let norms = norm_series(&out.history);
        assert_eq!(norms.len(), 4);
        assert!(norms
            .windows(2)
            .all(|w| w[0].frob_u == w[1].frob_u && w[0].step < w[1].step));
        assert_eq!(final_to_peak(&norms).unwrap(), [1.0; 3]);
        let ipr = ipr_series(&out.history);
        assert_eq!(ipr.fraction_decreasing, 0.0);
        assert_eq!(ipr.rise(), Some(0.0));
    }

    #[test]
    fn analytic_frozen_ipr_half() {
        let p = 13;
        let spec = AnalyticSpec::random(p, 40, FrequencyAssignment::Balanced, &mut Rng::new(8)).unwrap();
        let params = build_analytic_params(&spec).unwrap();
        let t = table(p, 0.5, 0.0, 6);
        let cfg = OptimConfig {
            lr: 0.0,
            steps: 20,
            ..OptimConfig::default()
        };
        let out = train_run(&t, params, &HyperKinds::default(), &cfg, &mut Rng::new(1)).unwrap();
        for v in ipr_series(&out.history).mean_ipr {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_step_single_row_and_decrease_fraction() {
        let t = table(5, 0.5, 0.0, 1);
        let init = ModelParams::init_gaussian(5, 4, None, 0.1, &mut Rng::new(3));
        let cfg = OptimConfig {
            steps: 0,
            ..OptimConfig::default()
        };
        let out = train_run(&t, init, &HyperKinds::default(), &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(norm_series(&out.history).len(), 1);
        assert_eq!(ipr_series(&out.history).fraction_decreasing, 0.0);

        let mk = |step, ipr| HistoryRow {
            step,
            mean_ipr: ipr,
            ..out.history.rows[0].clone()
        };
        let h = TrainHistory {
            rows: vec![mk(0, 0.1), mk(1, 0.3), mk(2, 0.2), mk(3, 0.4), mk(4, 0.5)],
        };
        let s = ipr_series(&h);
        assert_eq!(s.fraction_decreasing, 0.25);
        assert!((s.rise().unwrap() - 0.4).abs() < 1e-12);
        let mut buf = Vec::new();
        write_ipr_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,mean_ipr\n0,0.1\n"));
    }
}
