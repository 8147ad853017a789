//! Run configuration, run records and the command implementations behind the
//! `grokbench` binary.
//!
//! Config files are flat TOML: one `key = value` per line, no tables.
//! Every key is optional and falls back to [`RunConfig::default`]; unknown
//! keys are rejected. Command-line `--set key=value` overrides are applied on
//! top of the file with the same grammar.

mod commands;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::*;
pub use sweep::*;

use crate::dataset::{generate_table, ExampleTable, Op, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, HyperKinds, LossKind, ModelParams, NormKind};
use crate::numkit::{hash64, Rng};
use crate::optim::{BatchSize, OptimConfig};
use crate::phases::PhaseLabel;

/// Overrides the output directory of every command.
pub const OUT_ENV: &str = "GROKBENCH_OUT";
pub const DEFAULT_OUT: &str = "runs";
pub const RECORD_FILE: &str = "record.toml";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "params.bin";
pub const IPR_FILE: &str = "ipr.csv";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormSetting {
    None,
    Bn,
    Ln,
}

impl NormSetting {
    pub fn kind(self) -> Option<NormKind> {
        match self {
            NormSetting::None => None,
            NormSetting::Bn => Some(NormKind::BatchNorm),
            NormSetting::Ln => Some(NormKind::LayerNorm),
        }
    }
}

/// `(16N)^{-1/3}`, the square root of the `(16N)^{-2/3}` init variance.
pub fn default_init_std(width: usize) -> f64 {
    (16.0 * width as f64).powf(-1.0 / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub op: Op,
    pub p: usize,
    pub alpha: f64,
    pub xi: f64,
    pub width: usize,
    pub activation: Activation,
    pub loss: LossKind,
    pub norm: NormSetting,
    pub dropout_p: f64,
    /// Defaults to [`default_init_std`] of `width`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: BatchSize,
    pub steps: usize,
    pub eval_every: usize,
    pub decay_norm: bool,
    pub seed_data: u64,
    pub seed_corruption: u64,
    pub seed_init: u64,
    pub seed_shuffle: u64,
    /// Sampling in post-hoc reports (logit examples).
    pub seed_phases: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let o = OptimConfig::default();
        RunConfig {
            op: Op::Add,
            p: 97,
            alpha: 0.5,
            xi: 0.0,
            width: 500,
            activation: Activation::Quadratic,
            loss: LossKind::Mse,
            norm: NormSetting::None,
            dropout_p: 0.0,
            init_std: None,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            steps: o.steps,
            eval_every: o.eval_every,
            decay_norm: o.decay_norm,
            seed_data: 0,
            seed_corruption: 0,
            seed_init: 0,
            seed_shuffle: 0,
            seed_phases: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<RunConfig> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_toml(&fs::read_to_string(path)?)
    }

    /// Applies one `key=value` override. The value is read as a TOML value,
    /// falling back to a bare string (`norm=bn`, `batch_size=full`).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Internal(e.to_string()))?;
        table.insert(key.to_string(), value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Sets every seed stream to `seed`.
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.seed_data = seed;
        self.seed_corruption = seed;
        self.seed_init = seed;
        self.seed_shuffle = seed;
        self.seed_phases = seed;
    }

    pub fn task(&self) -> TaskSpec {
        TaskSpec { op: self.op, p: self.p }
    }

    pub fn hyper(&self) -> HyperKinds {
        HyperKinds {
            activation: self.activation,
            loss: self.loss,
            dropout_p: self.dropout_p,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            steps: self.steps,
            eval_every: self.eval_every,
            decay_norm: self.decay_norm,
        }
    }

    pub fn init_std(&self) -> f64 {
        self.init_std.unwrap_or_else(|| default_init_std(self.width))
    }

    pub fn validate(&self) -> Result<()> {
        self.task().validate()?;
        if self.width == 0 {
            return Err(Error::Config("width must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::Config(format!("xi must lie in [0, 1], got {}", self.xi)));
        }
        let std = self.init_std();
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::Config(format!("init_std must be finite and >= 0, got {std}")));
        }
        self.hyper().validate()?;
        self.optim().validate()
    }

    pub fn build_table(&self) -> Result<ExampleTable> {
        generate_table(self.task())?
            .split(self.alpha, &mut Rng::new(self.seed_data).fork("data"))?
            .corrupt(self.xi, &mut Rng::new(self.seed_corruption).fork("corruption"))
    }

    pub fn init_params(&self) -> ModelParams {
        ModelParams::init_gaussian(
            self.p,
            self.width,
            self.norm.kind(),
            self.init_std(),
            &mut Rng::new(self.seed_init).fork("init"),
        )
    }

    pub fn shuffle_rng(&self) -> Rng {
        Rng::new(self.seed_shuffle).fork("shuffle")
    }

    pub fn report_rng(&self) -> Rng {
        Rng::new(self.seed_phases).fork("report")
    }
}

/// Fingerprint of a table's split and labels, as 16 hex digits.
pub fn table_digest(table: &ExampleTable) -> String {
    let mut words = vec![table.p() as u64, table.task.op as u64];
    for i in 0..table.len() {
        words.push(((table.in_train[i] as u64) << 32) | table.assigned_labels[i] as u64);
    }
    format!("{:016x}", hash64(&words))
}

/// Output root: explicit argument, then `$GROKBENCH_OUT`, then the config's
/// `out_dir`, then `runs`.
pub fn resolve_out_dir(explicit: Option<&Path>, config: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(v) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    config
        .and_then(|c| c.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub version: String,
    pub status: RunStatus,
    pub phase: PhaseLabel,
    pub degenerate_band: bool,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_train_acc_corrupted: f64,
    pub max_test_acc: f64,
    pub final_mean_ipr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    pub steps_completed: usize,
    pub wall_clock_secs: f64,
    pub table_digest: String,
    /// Paths relative to the run directory.
    pub history: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ipr_report: Option<String>,
    pub config: RunConfig,
}

impl RunRecord {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<RunRecord> {
        toml::from_str(s).map_err(|e| Error::Format(format!("run record: {e}")))
    }

    pub fn load(run_dir: &Path) -> Result<RunRecord> {
        RunRecord::from_toml(&fs::read_to_string(run_dir.join(RECORD_FILE))?)
    }

    /// Writes `record.toml` via a temporary file and rename, so a record is
    /// either absent or complete.
    pub fn store(&self, run_dir: &Path) -> Result<()> {
        let tmp = run_dir.join(format!("{RECORD_FILE}.tmp"));
        fs::write(&tmp, self.to_toml()?)?;
        fs::rename(tmp, run_dir.join(RECORD_FILE))?;
        Ok(())
    }
}
