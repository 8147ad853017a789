use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{
    table_digest, RunConfig, RunRecord, RunStatus, ARTIFACT_VERSION, CHECKPOINT_FILE, HISTORY_FILE, IPR_FILE,
    RECORD_FILE,
};
use crate::analytic::{build_analytic_params, verify_analytic, AnalyticSpec, FrequencyAssignment};
use crate::dataset::ExampleTable;
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Activation, Checkpoint, ModelParams};
use crate::numkit::Rng;
use crate::optim::{train_run, TrainHistory};
use crate::phases::{classify_history, classify_with, Classification, PhaseLabel, Thresholds};
use crate::pruning::{max_prunable, prune_sweep, MaxPrunable, PruneOrder, PruneTrace};
use crate::reports::{
    final_to_peak, ipr_series, logit_report, norm_series, write_ipr_csv, write_norm_csv, LogitReport,
};
use crate::spectral::{ipr_histogram, per_neuron_ipr, IprReport};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

/// Trains one run into `run_dir`: history CSV, checkpoint, per-neuron IPR
/// and `record.toml` (written last). Refuses to touch a directory that
/// already holds a record unless `force`.
pub fn cmd_train(cfg: &RunConfig, run_dir: &Path, force: bool) -> Result<RunRecord> {
    cfg.validate()?;
    refuse_existing(&run_dir.join(RECORD_FILE), force)?;
    fs::create_dir_all(run_dir)?;
    for stale in [RECORD_FILE, CHECKPOINT_FILE, IPR_FILE] {
        let _ = fs::remove_file(run_dir.join(stale));
    }

    let t0 = Instant::now();
    let table = cfg.build_table()?;
    let out = train_run(
        &table,
        cfg.init_params(),
        &cfg.hyper(),
        &cfg.optim(),
        &mut cfg.shuffle_rng(),
    )?;

    let mut f = create(&run_dir.join(HISTORY_FILE))?;
    out.history.write_csv(&mut f)?;
    f.flush()?;

    let (checkpoint, ipr_report) = if out.divergence.is_none() {
        let mut f = create(&run_dir.join(CHECKPOINT_FILE))?;
        write_checkpoint(&mut f, &out.params, cfg.activation)?;
        f.flush()?;
        let rep = per_neuron_ipr(&out.params, 2.0);
        let mut f = create(&run_dir.join(IPR_FILE))?;
        rep.write_csv(&mut f)?;
        f.flush()?;
        (Some(CHECKPOINT_FILE.to_string()), Some(IPR_FILE.to_string()))
    } else {
        (None, None)
    };

    let record = build_record(cfg, &table, &out.history, out.divergence.as_ref().map(|d| d.step), t0)?
        .with_paths(checkpoint, ipr_report);
    record.store(run_dir)?;
    Ok(record)
}

fn build_record(
    cfg: &RunConfig,
    table: &ExampleTable,
    history: &TrainHistory,
    diverged_at: Option<usize>,
    t0: Instant,
) -> Result<RunRecord> {
    let class = classify_history(history, cfg.xi).unwrap_or(Classification {
        label: PhaseLabel::Confusion,
        degenerate_band: false,
    });
    let last = history.last();
    let get = |f: fn(&crate::optim::HistoryRow) -> f64| last.map_or(0.0, f);
    Ok(RunRecord {
        version: ARTIFACT_VERSION.to_string(),
        status: if diverged_at.is_some() {
            RunStatus::Diverged
        } else {
            RunStatus::Ok
        },
        phase: class.label,
        degenerate_band: class.degenerate_band,
        final_train_acc: get(|r| r.train_acc),
        final_test_acc: get(|r| r.test_acc),
        final_train_acc_corrupted: get(|r| r.train_acc_corrupted),
        max_test_acc: history.max_test_acc(),
        final_mean_ipr: get(|r| r.mean_ipr),
        diverged_at,
        steps_completed: last.map_or(0, |r| r.step),
        wall_clock_secs: t0.elapsed().as_secs_f64(),
        table_digest: table_digest(table),
        history: HISTORY_FILE.to_string(),
        checkpoint: None,
        ipr_report: None,
        config: cfg.clone(),
    })
}

impl RunRecord {
    fn with_paths(mut self, checkpoint: Option<String>, ipr_report: Option<String>) -> Self {
        self.checkpoint = checkpoint;
        self.ipr_report = ipr_report;
        self
    }

    pub fn read_history(&self, run_dir: &Path) -> Result<TrainHistory> {
        TrainHistory::read_csv(BufReader::new(File::open(run_dir.join(&self.history))?))
    }

    pub fn read_params(&self, run_dir: &Path) -> Result<ModelParams> {
        let rel = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Data(format!("run in {} has no checkpoint", run_dir.display())))?;
        let ck = load_checkpoint(&run_dir.join(rel))?;
        let c = &self.config;
        if ck.params.p() != c.p || ck.params.width() != c.width || ck.activation != c.activation {
            return Err(Error::Data(format!(
                "checkpoint shape p={} N={} {:?} does not match recorded config p={} N={} {:?}",
                ck.params.p(),
                ck.params.width(),
                ck.activation,
                c.p,
                c.width,
                c.activation
            )));
        }
        Ok(ck.params)
    }

    /// Rebuilds the training table and checks it against the recorded digest.
    pub fn rebuild_table(&self) -> Result<ExampleTable> {
        let table = self.config.build_table()?;
        let digest = table_digest(&table);
        if digest != self.table_digest {
            return Err(Error::Data(format!(
                "regenerated table digest {digest} differs from recorded {}",
                self.table_digest
            )));
        }
        Ok(table)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Seeds the caller expects the checkpoint's table to have been built from.
#[derive(Clone, Copy, Debug, Default)]
pub struct SeedExpectation {
    pub seed_data: Option<u64>,
    pub seed_corruption: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneSummary {
    pub floor: f64,
    pub max_prunable: usize,
    pub survivors: usize,
    pub below_floor: bool,
}

#[derive(Debug)]
pub struct PruneOutput {
    pub traces: Vec<PruneTrace>,
    pub summary: PruneSummary,
}

/// Prunes a trained run in each requested order, writing `prune_<order>.csv`
/// and `prune_summary.toml` into the run directory.
pub fn cmd_prune(
    run_dir: &Path,
    orders: &[PruneOrder],
    every: usize,
    floor: f64,
    expect: SeedExpectation,
    force: bool,
) -> Result<PruneOutput> {
    let record = RunRecord::load(run_dir)?;
    let cfg = &record.config;
    for (name, want, have) in [
        ("seed_data", expect.seed_data, cfg.seed_data),
        ("seed_corruption", expect.seed_corruption, cfg.seed_corruption),
    ] {
        if let Some(w) = want.filter(|&w| w != have) {
            return Err(Error::Config(format!(
                "seed mismatch: checkpoint was trained with {name}={have}, requested {w}"
            )));
        }
    }
    let params = record.read_params(run_dir)?;
    let table = record.rebuild_table()?;
    let hyper = cfg.hyper();

    let mut traces = Vec::new();
    for &order in orders {
        let path = run_dir.join(format!("prune_{order}.csv"));
        refuse_existing(&path, force)?;
        let trace = prune_sweep(&params, &table, &hyper, order, every)?;
        let mut f = create(&path)?;
        trace.write_csv(&mut f)?;
        f.flush()?;
        traces.push(trace);
    }
    let MaxPrunable {
        count,
        survivors,
        below_floor,
    } = max_prunable(&params, &table, &hyper, floor)?;
    let summary = PruneSummary {
        floor,
        max_prunable: count,
        survivors,
        below_floor,
    };
    fs::write(
        run_dir.join("prune_summary.toml"),
        toml::to_string(&summary).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    Ok(PruneOutput { traces, summary })
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub p: usize,
    pub width: usize,
    pub seed: u64,
    pub variant: FrequencyAssignment,
    pub accuracy: f64,
    pub max_offtarget_logit: f64,
    pub mean_target_logit: f64,
    /// Phase-free sum at a residue of zero (the target).
    pub boxed_at_target: f64,
    /// Largest `|boxed term|` over nonzero residues.
    pub boxed_max_offtarget: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.accuracy == 1.0
    }
}

/// Builds the periodic closed-form network and evaluates it on all `p²`
/// inputs.
pub fn cmd_verify_analytic(p: usize, width: usize, seed: u64, variant: FrequencyAssignment) -> Result<VerifyReport> {
    let spec = AnalyticSpec::random(p, width, variant, &mut Rng::new(seed).fork("phases"))?;
    let params = build_analytic_params(&spec)?;
    let rep = verify_analytic(&params, Activation::Quadratic)?;
    let boxed_max_offtarget = (1..p as i64).map(|x| spec.boxed_term(x).abs()).fold(0.0, f64::max);
    Ok(VerifyReport {
        p,
        width,
        seed,
        variant,
        accuracy: rep.accuracy,
        max_offtarget_logit: rep.max_offtarget_logit,
        mean_target_logit: rep.mean_target_logit,
        boxed_at_target: spec.boxed_term(0),
        boxed_max_offtarget,
    })
}

/// Classifies final accuracies. The best historical test accuracy comes from
/// `history` if given, else from `max_hist_test`, else the final test value.
pub fn cmd_classify(
    train: f64,
    test: f64,
    xi: f64,
    history: Option<&Path>,
    max_hist_test: Option<f64>,
    thresholds: &Thresholds,
) -> Result<Classification> {
    for (name, v) in [("train", train), ("test", test), ("xi", xi)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let hist = match history {
        Some(path) => TrainHistory::read_csv(BufReader::new(File::open(path)?))?.max_test_acc(),
        None => max_hist_test.unwrap_or(test),
    };
    Ok(classify_with(train, test, xi, hist, thresholds))
}

/// Accepts a run directory or a checkpoint file.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug)]
pub struct IprOutput {
    pub report: IprReport,
    pub histogram: Vec<usize>,
}

pub fn cmd_ipr(checkpoint: &Path, r: f64, bins: usize, csv_out: Option<&Path>) -> Result<IprOutput> {
    if !(r > 0.0 && r.is_finite()) || bins == 0 {
        return Err(Error::Config("need r > 0 and bins >= 1".into()));
    }
    let ck = load_checkpoint(&resolve_checkpoint(checkpoint))?;
    let report = per_neuron_ipr(&ck.params, r);
    if let Some(path) = csv_out {
        let mut f = create(path)?;
        report.write_csv(&mut f)?;
        f.flush()?;
    }
    let histogram = ipr_histogram(&report, bins);
    Ok(IprOutput { report, histogram })
}

/// Writes `logits.csv` and `logits.json` into the run directory.
pub fn cmd_logits(run_dir: &Path, k: usize) -> Result<LogitReport> {
    let record = RunRecord::load(run_dir)?;
    let params = record.read_params(run_dir)?;
    let table = record.rebuild_table()?;
    let rep = logit_report(
        &params,
        &table,
        &record.config.hyper(),
        k,
        &mut record.config.report_rng(),
    )?;
    let mut f = create(&run_dir.join("logits.csv"))?;
    rep.write_csv(&mut f)?;
    f.flush()?;
    rep.write_json(create(&run_dir.join("logits.json"))?)?;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesSummary {
    pub checkpoints: usize,
    pub norm_final_to_peak: [f64; 3],
    pub ipr_initial: f64,
    pub ipr_final: f64,
    pub ipr_fraction_decreasing: f64,
}

/// Writes `norms.csv` and `ipr_series.csv` into the run directory.
pub fn cmd_report(run_dir: &Path) -> Result<SeriesSummary> {
    let record = RunRecord::load(run_dir)?;
    let history = record.read_history(run_dir)?;
    if history.rows.is_empty() {
        return Err(Error::Data("history is empty".into()));
    }
    let norms = norm_series(&history);
    let ipr = ipr_series(&history);
    write_norm_csv(&norms, create(&run_dir.join("norms.csv"))?)?;
    write_ipr_csv(&ipr, create(&run_dir.join("ipr_series.csv"))?)?;
    Ok(SeriesSummary {
        checkpoints: norms.len(),
        norm_final_to_peak: final_to_peak(&norms).unwrap_or([0.0; 3]),
        ipr_initial: ipr.mean_ipr[0],
        ipr_final: *ipr.mean_ipr.last().unwrap(),
        ipr_fraction_decreasing: ipr.fraction_decreasing,
    })
}
