//! C ABI over `grokbench`.
//!
//! Objects are opaque heap handles created by `gb_*_new`/`gb_*_build`/...
//! and released with the matching `gb_*_free`. Every fallible function
//! returns a [`GbStatus`]; on failure the message is kept per thread and can
//! be fetched with [`gb_last_error`]. Panics never cross the boundary.
//!
//! # Safety
//!
//! Every pointer argument must be null or valid for the access its type
//! implies: handles must come from this library and not be freed yet,
//! strings must be NUL-terminated, and output buffers must hold the stated
//! length. Null is reported as `GB_STATUS_NULL_POINTER` where an argument is
//! required. Handles are not thread-safe; share one across threads only with
//! external locking.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use grokbench::analytic::{build_analytic_params, verify_analytic, AnalyticSpec, FrequencyAssignment};
use grokbench::dataset::ExampleTable;
use grokbench::labctl::RunConfig;
use grokbench::model::{read_checkpoint, write_checkpoint, Activation, ModelParams};
use grokbench::numkit::Rng;
use grokbench::optim::{evaluate, train_run};
use grokbench::phases::{classify, classify_history, PhaseLabel};
use grokbench::pruning::prune_neuron;
use grokbench::spectral::per_neuron_ipr;
use grokbench::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Shape = 5,
    NonFinite = 6,
    Degenerate = 7,
    Format = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

/// Phase codes, in the order of the classifier's tie-break severity.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GbPhase {
    Confusion = 0,
    Forgetting = 1,
    Memorization = 2,
    Coexistence = 3,
    PartialInversion = 4,
    FullInversion = 5,
}

impl From<PhaseLabel> for GbPhase {
    fn from(l: PhaseLabel) -> Self {
        match l {
            PhaseLabel::Confusion => GbPhase::Confusion,
            PhaseLabel::Forgetting => GbPhase::Forgetting,
            PhaseLabel::Memorization => GbPhase::Memorization,
            PhaseLabel::Coexistence => GbPhase::Coexistence,
            PhaseLabel::PartialInversion => GbPhase::PartialInversion,
            PhaseLabel::FullInversion => GbPhase::FullInversion,
        }
    }
}

/// Opaque run configuration.
pub struct GbConfig(RunConfig);

/// Opaque example table (split and corrupted).
pub struct GbTable(ExampleTable);

/// Opaque network weights.
pub struct GbModel {
    params: ModelParams,
    activation: Activation,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GbEval {
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_acc_clean: f64,
    pub train_acc_corrupted: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub mean_ipr: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GbTrainSummary {
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_train_acc_corrupted: f64,
    pub max_test_acc: f64,
    pub final_mean_ipr: f64,
    pub steps_completed: u64,
    /// Step of the first non-finite value, or -1.
    pub diverged_at: i64,
    pub phase: GbPhase,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct GbAnalyticReport {
    pub accuracy: f64,
    pub max_offtarget_logit: f64,
    pub mean_target_logit: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GbStatus {
    match e {
        Error::Shape { .. } => GbStatus::Shape,
        Error::Config(_) => GbStatus::Config,
        Error::Data(_) => GbStatus::Data,
        Error::Internal(_) => GbStatus::Internal,
        Error::NonFinite { .. } => GbStatus::NonFinite,
        Error::Degenerate(_) => GbStatus::Degenerate,
        Error::Format(_) | Error::Csv(_) => GbStatus::Format,
        Error::Io(_) => GbStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Lib(Error::Io(e))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GbStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GbStatus::NullPointer
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            GbStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside grokbench".into());
            GbStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    let slot = as_mut(out, "output handle")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in
/// bytes, or 0 if there is none.
#[no_mangle]
pub unsafe extern "C" fn gb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with the reference defaults (p=97, N=500, ...).
#[no_mangle]
pub unsafe extern "C" fn gb_config_new(out: *mut *mut GbConfig) -> GbStatus {
    guard(|| put(out, GbConfig(RunConfig::default())))
}

/// Applies one `key=value` override using the config-file grammar.
#[no_mangle]
pub unsafe extern "C" fn gb_config_set(cfg: *mut GbConfig, assignment: *const c_char) -> GbStatus {
    guard(|| {
        let cfg = as_mut(cfg, "config")?;
        let kv = as_str(assignment, "assignment")?;
        let mut next = cfg.0.clone();
        next.set(kv)?;
        cfg.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_config_validate(cfg: *const GbConfig) -> GbStatus {
    guard(|| Ok(as_ref(cfg, "config")?.0.validate()?))
}

#[no_mangle]
pub unsafe extern "C" fn gb_config_free(cfg: *mut GbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds the split, corrupted table described by `cfg`.
#[no_mangle]
pub unsafe extern "C" fn gb_table_build(cfg: *const GbConfig, out: *mut *mut GbTable) -> GbStatus {
    guard(|| {
        let cfg = as_ref(cfg, "config")?;
        cfg.0.validate()?;
        put(out, GbTable(cfg.0.build_table()?))
    })
}

/// Sizes of the table's subsets. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn gb_table_counts(
    table: *const GbTable,
    train: *mut usize,
    test: *mut usize,
    corrupted: *mut usize,
) -> GbStatus {
    guard(|| {
        let s = as_ref(table, "table")?.0.subsets();
        for (p, v) in [
            (train, s.train.len()),
            (test, s.test.len()),
            (corrupted, s.train_corrupted.len()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_table_free(table: *mut GbTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Gaussian initialization from `cfg` (its init seed and std).
#[no_mangle]
pub unsafe extern "C" fn gb_model_init(cfg: *const GbConfig, out: *mut *mut GbModel) -> GbStatus {
    guard(|| {
        let cfg = &as_ref(cfg, "config")?.0;
        cfg.validate()?;
        put(
            out,
            GbModel {
                params: cfg.init_params(),
                activation: cfg.activation,
            },
        )
    })
}

/// The periodic closed-form network. `balanced != 0` selects the balanced
/// frequency assignment instead of a random permutation.
#[no_mangle]
pub unsafe extern "C" fn gb_model_analytic(
    p: usize,
    width: usize,
    seed: u64,
    balanced: i32,
    out: *mut *mut GbModel,
) -> GbStatus {
    guard(|| {
        let variant = if balanced != 0 {
            FrequencyAssignment::Balanced
        } else {
            FrequencyAssignment::Permutation
        };
        let spec = AnalyticSpec::random(p, width, variant, &mut Rng::new(seed).fork("phases"))?;
        put(
            out,
            GbModel {
                params: build_analytic_params(&spec)?,
                activation: Activation::Quadratic,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_model_load(path: *const c_char, out: *mut *mut GbModel) -> GbStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let ck = read_checkpoint(BufReader::new(File::open(path)?))?;
        put(
            out,
            GbModel {
                params: ck.params,
                activation: ck.activation,
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_model_save(model: *const GbModel, path: *const c_char) -> GbStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let mut w = BufWriter::new(File::create(as_str(path, "path")?)?);
        write_checkpoint(&mut w, &m.params, m.activation)?;
        w.flush()?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_model_shape(model: *const GbModel, p: *mut usize, width: *mut usize) -> GbStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        *as_mut(p, "p")? = m.params.p();
        *as_mut(width, "width")? = m.params.width();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn gb_model_free(model: *mut GbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains from `cfg` and returns the final model. The model is returned
/// even when training diverged (`summary.diverged_at >= 0`).
#[no_mangle]
pub unsafe extern "C" fn gb_train(
    cfg: *const GbConfig,
    out_model: *mut *mut GbModel,
    summary: *mut GbTrainSummary,
) -> GbStatus {
    guard(|| {
        let cfg = &as_ref(cfg, "config")?.0;
        let summary = as_mut(summary, "summary")?;
        as_mut(out_model, "output handle")?;
        cfg.validate()?;
        let table = cfg.build_table()?;
        let out = train_run(
            &table,
            cfg.init_params(),
            &cfg.hyper(),
            &cfg.optim(),
            &mut cfg.shuffle_rng(),
        )?;
        let last = out
            .history
            .last()
            .cloned()
            .ok_or_else(|| Error::Internal("empty history".into()))?;
        *summary = GbTrainSummary {
            final_train_acc: last.train_acc,
            final_test_acc: last.test_acc,
            final_train_acc_corrupted: last.train_acc_corrupted,
            max_test_acc: out.history.max_test_acc(),
            final_mean_ipr: last.mean_ipr,
            steps_completed: last.step as u64,
            diverged_at: out.divergence.as_ref().map_or(-1, |d| d.step as i64),
            phase: classify_history(&out.history, cfg.xi)?.label.into(),
        };
        put(
            out_model,
            GbModel {
                params: out.params,
                activation: cfg.activation,
            },
        )
    })
}

/// Evaluates `model` on `table` in eval mode with MSE loss.
#[no_mangle]
pub unsafe extern "C" fn gb_model_evaluate(model: *const GbModel, table: *const GbTable, out: *mut GbEval) -> GbStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let t = &as_ref(table, "table")?.0;
        let out = as_mut(out, "output")?;
        let hyper = grokbench::model::HyperKinds {
            activation: m.activation,
            ..Default::default()
        };
        let r = evaluate(&m.params, t, &hyper, 0)?;
        *out = GbEval {
            train_acc: r.train_acc,
            test_acc: r.test_acc,
            train_acc_clean: r.train_acc_clean,
            train_acc_corrupted: r.train_acc_corrupted,
            train_loss: r.train_loss,
            test_loss: r.test_loss,
            mean_ipr: r.mean_ipr,
        };
        Ok(())
    })
}

/// Writes the combined IPR (r = 2) of each neuron into `out[0..len]`; dead
/// neurons get NaN. `len` must equal the width. The mean over live neurons
/// goes to `mean` if it is not null.
#[no_mangle]
pub unsafe extern "C" fn gb_model_ipr(model: *const GbModel, out: *mut f64, len: usize, mean: *mut f64) -> GbStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("output array"));
        }
        if len != m.params.width() {
            return Err(Fail::Arg(format!("array length {len} != width {}", m.params.width())));
        }
        let rep = per_neuron_ipr(&m.params, 2.0);
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, n) in dst.iter_mut().zip(&rep.per_neuron) {
            *d = n.ipr_combined.unwrap_or(f64::NAN);
        }
        if let Some(mean) = mean.as_mut() {
            *mean = rep.mean_ipr;
        }
        Ok(())
    })
}

/// Zeroes every weight attached to hidden neuron `k`.
#[no_mangle]
pub unsafe extern "C" fn gb_model_prune(model: *mut GbModel, k: usize) -> GbStatus {
    guard(|| Ok(prune_neuron(&mut as_mut(model, "model")?.params, k)?))
}

/// Checks a quadratic model against modular addition on all `p²` inputs.
#[no_mangle]
pub unsafe extern "C" fn gb_verify_analytic(model: *const GbModel, out: *mut GbAnalyticReport) -> GbStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let out = as_mut(out, "output")?;
        let r = verify_analytic(&m.params, m.activation)?;
        *out = GbAnalyticReport {
            accuracy: r.accuracy,
            max_offtarget_logit: r.max_offtarget_logit,
            mean_target_logit: r.mean_target_logit,
        };
        Ok(())
    })
}

/// Phase of a finished run from its final and best-seen accuracies.
#[no_mangle]
pub unsafe extern "C" fn gb_classify(
    train_acc: f64,
    test_acc: f64,
    xi: f64,
    max_hist_test_acc: f64,
    out: *mut GbPhase,
) -> GbStatus {
    guard(|| {
        let out = as_mut(out, "output")?;
        for v in [train_acc, test_acc, xi, max_hist_test_acc] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Fail::Arg(format!("{v} is outside [0, 1]")));
            }
        }
        *out = classify(train_acc, test_acc, xi, max_hist_test_acc).into();
        Ok(())
    })
}
