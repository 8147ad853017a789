use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use grokbench::analytic::FrequencyAssignment;
use grokbench::labctl::{
    cmd_classify, cmd_ipr, cmd_logits, cmd_prune, cmd_report, cmd_sweep, cmd_train, cmd_verify_analytic, parse_grid,
    resolve_out_dir, CellId, RunConfig, RunStatus, SeedExpectation, SweepSpec,
};
use grokbench::phases::{PhaseLabel, Thresholds};
use grokbench::pruning::PruneOrder;
use grokbench::reports::DEFAULT_LOGIT_EXAMPLES;
use grokbench::Result;

/// Exit status for a run that stopped on non-finite values.
const EXIT_DIVERGED: u8 = 3;
/// Exit status when the closed-form network misclassifies an input.
const EXIT_VERIFY_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "grokbench",
    version,
    about = "Two-layer MLPs on corrupted modular arithmetic"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one network and write its artifacts.
    Train(TrainArgs),
    /// Train every cell of an (alpha, xi) grid and assemble a phase diagram.
    Sweep(SweepArgs),
    /// Prune a trained run by IPR order.
    Prune(PruneArgs),
    /// Per-neuron IPR of a checkpoint.
    Ipr(IprArgs),
    /// Build the periodic closed-form network and check it on all inputs.
    VerifyAnalytic(VerifyArgs),
    /// Classify final accuracies into a phase.
    Classify(ClassifyArgs),
    /// Logits of sampled corrupted training examples.
    Logits(LogitsArgs),
    /// Norm and IPR time series of a run.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable; applied after the file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    /// Weight decay.
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Sets every seed stream.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(x) = self.alpha {
            cfg.alpha = x;
        }
        if let Some(x) = self.xi {
            cfg.xi = x;
        }
        if let Some(x) = self.wd {
            cfg.weight_decay = x;
        }
        if let Some(x) = self.steps {
            cfg.steps = x;
        }
        if let Some(x) = self.width {
            cfg.width = x;
        }
        if let Some(s) = self.seed {
            cfg.set_all_seeds(s);
        }
        for kv in &self.set {
            cfg.set(kv)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output root (overrides $GROKBENCH_OUT and the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec file (grid, seeds and a [base] config table).
    #[arg(long, conflicts_with_all = ["alphas", "xis"])]
    spec: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// `a,b,c` or `start:stop:count`; default 0.1:0.9:17.
    #[arg(long)]
    alphas: Option<String>,
    /// Default 0.0:0.9:19.
    #[arg(long)]
    xis: Option<String>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Default: available cores minus one.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    run: PathBuf,
    /// low, high or both.
    #[arg(long, default_value = "both")]
    order: String,
    #[arg(long, default_value_t = 5)]
    every: usize,
    #[arg(long, default_value_t = 0.99)]
    floor: f64,
    /// Refuse unless the run was trained with this data seed.
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_corruption: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct IprArgs {
    /// Checkpoint file or run directory.
    path: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 97)]
    p: usize,
    #[arg(long, default_value_t = 500)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// permutation or balanced.
    #[arg(long, default_value = "permutation")]
    variant: FrequencyAssignment,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    train: f64,
    #[arg(long)]
    test: f64,
    #[arg(long)]
    xi: f64,
    /// History CSV supplying the best test accuracy seen.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, conflicts_with = "history")]
    max_test: Option<f64>,
    #[arg(long, default_value_t = 1.05)]
    slack: f64,
}

#[derive(Args)]
struct LogitsArgs {
    run: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LOGIT_EXAMPLES)]
    k: usize,
}

#[derive(Args)]
struct ReportArgs {
    run: PathBuf,
}

fn default_run_name(cfg: &RunConfig) -> String {
    format!("a{}_x{}_wd{}_s{}", cfg.alpha, cfg.xi, cfg.weight_decay, cfg.seed_init)
}

fn train(a: TrainArgs) -> Result<u8> {
    let cfg = a.config.load()?;
    let root = resolve_out_dir(a.out.as_deref(), Some(&cfg));
    let dir = root.join(a.name.unwrap_or_else(|| default_run_name(&cfg)));
    let rec = cmd_train(&cfg, &dir, a.force)?;
    println!("run       {}", dir.display());
    println!("phase     {}", rec.phase);
    println!(
        "train {:.4}  test {:.4}  corrupted {:.4}  max test {:.4}",
        rec.final_train_acc, rec.final_test_acc, rec.final_train_acc_corrupted, rec.max_test_acc
    );
    println!("mean ipr  {:.4}", rec.final_mean_ipr);
    if rec.status == RunStatus::Diverged {
        eprintln!("diverged at step {}", rec.diverged_at.unwrap_or(0));
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => SweepSpec::from_toml(&std::fs::read_to_string(p)?)?,
        None => {
            let mut s = SweepSpec {
                base: a.config.load()?,
                seeds_per_cell: a.seeds,
                base_seed: a.base_seed,
                ..SweepSpec::default()
            };
            if let Some(g) = &a.alphas {
                s.alphas = parse_grid(g)?;
            }
            if let Some(g) = &a.xis {
                s.xis = parse_grid(g)?;
            }
            s
        }
    };
    if let Some(w) = a.workers {
        spec.workers = w;
    }
    let out = a
        .out
        .unwrap_or_else(|| resolve_out_dir(None, Some(&spec.base)).join("sweep"));
    let progress = |id: CellId, msg: &str| eprintln!("{} {msg}", id.dir_name());
    let outcome = cmd_sweep(&spec, &out, &progress)?;
    print!("{}", outcome.diagram.render_text());
    println!(
        "{} cells, {} resumed, {} failed -> {}",
        outcome.records.len(),
        outcome.resumed,
        outcome.failures.len(),
        out.display()
    );
    for (id, e) in &outcome.failures {
        eprintln!("{}: {e}", id.dir_name());
    }
    Ok(if outcome.failures.is_empty() { 0 } else { 1 })
}

fn prune(a: PruneArgs) -> Result<u8> {
    let orders = match a.order.as_str() {
        "both" => vec![PruneOrder::LowFirst, PruneOrder::HighFirst],
        s => vec![s.parse()?],
    };
    let expect = SeedExpectation {
        seed_data: a.seed_data,
        seed_corruption: a.seed_corruption,
    };
    let out = cmd_prune(&a.run, &orders, a.every, a.floor, expect, a.force)?;
    for t in &out.traces {
        println!("order {}:", t.order);
        println!("  pruned  train   test    corrupted");
        for r in &t.rows {
            println!(
                "  {:6}  {:.4}  {:.4}  {:.4}",
                r.pruned_count, r.train_acc, r.test_acc, r.corrupted_train_acc
            );
        }
    }
    let s = &out.summary;
    println!(
        "max prunable at floor {}: {} (survivors {}){}",
        s.floor,
        s.max_prunable,
        s.survivors,
        if s.below_floor {
            ", unpruned model already below floor"
        } else {
            ""
        }
    );
    Ok(0)
}

fn ipr(a: IprArgs) -> Result<u8> {
    let out = cmd_ipr(&a.path, a.r, a.bins, a.csv.as_deref())?;
    let rep = &out.report;
    println!(
        "mean ipr {:.4} over {} live neurons ({} dead)",
        rep.mean_ipr,
        rep.live_count(),
        rep.per_neuron.len() - rep.live_count()
    );
    let w = 1.0 / a.bins as f64;
    for (i, c) in out.histogram.iter().enumerate() {
        println!("[{:.2}, {:.2}) {c}", i as f64 * w, (i + 1) as f64 * w);
    }
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8> {
    let r = cmd_verify_analytic(a.p, a.width, a.seed, a.variant)?;
    println!("accuracy            {:.6}", r.accuracy);
    println!("mean target logit   {:.6}", r.mean_target_logit);
    println!("max |off-target|    {:.6}", r.max_offtarget_logit);
    println!("boxed term target   {:.12}", r.boxed_at_target);
    println!("boxed term max off  {:.6}", r.boxed_max_offtarget);
    Ok(if r.passed() { 0 } else { EXIT_VERIFY_FAILED })
}

fn classify(a: ClassifyArgs) -> Result<u8> {
    let th = Thresholds {
        slack: a.slack,
        ..Thresholds::default()
    };
    let c = cmd_classify(a.train, a.test, a.xi, a.history.as_deref(), a.max_test, &th)?;
    println!("{}", c.label);
    if c.degenerate_band && c.label == PhaseLabel::FullInversion {
        eprintln!("note: partial-inversion band is empty at xi={}", a.xi);
    }
    Ok(0)
}

fn logits(a: LogitsArgs) -> Result<u8> {
    let rep = cmd_logits(&a.run, a.k)?;
    if rep.empty {
        println!("no corrupted training examples");
        return Ok(0);
    }
    println!("   m   n  true  corr  f[true]    f[corr]    max other");
    for r in &rep.rows {
        println!(
            "{:4}{:4}{:6}{:6}  {:+.4e} {:+.4e} {:+.4e}",
            r.m, r.n, r.true_label, r.corrupted_label, r.logit_at_true, r.logit_at_corrupted, r.max_other_logit
        );
    }
    Ok(0)
}

fn report(a: ReportArgs) -> Result<u8> {
    let s = cmd_report(&a.run)?;
    println!("checkpoints            {}", s.checkpoints);
    let [u, v, w] = s.norm_final_to_peak;
    println!("final/peak |U| |V| |W| {u:.4} {v:.4} {w:.4}");
    println!("mean ipr first -> last {:.4} -> {:.4}", s.ipr_initial, s.ipr_final);
    println!("ipr decreasing steps   {:.3}", s.ipr_fraction_decreasing);
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Prune(a) => prune(a),
        Cmd::Ipr(a) => ipr(a),
        Cmd::VerifyAnalytic(a) => verify(a),
        Cmd::Classify(a) => classify(a),
        Cmd::Logits(a) => logits(a),
        Cmd::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
