//! C ABI over `fedcond`.
//!
//! Every fallible function returns a [`FedcondStatus`]. On failure a
//! message is kept per thread and read with [`fedcond_last_error`].
//! Handles (`FedcondConfig`, `FedcondReport`) are opaque; the caller owns
//! them and releases them with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use fedcond::datasets::{FeatureExtractor, Sample};
use fedcond::experiment::{
    emit_report, run_experiment, ExperimentConfig, ExperimentError, Formats, RunOptions, RunReport, Stage,
};
use fedcond::stats::{build_augmented, pca_eigenvalues, StatsError};
use thiserror::Error;

/// Status codes. `FEDCOND_STATUS_OK` is zero; pipeline failures map to the
/// stage that failed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedcondStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Load = 4,
    Partition = 5,
    Fingerprint = 6,
    Train = 7,
    Evaluate = 8,
    Emit = 9,
    Panic = 10,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("null pointer passed for {0}")]
    Null(&'static str),
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl FfiError {
    fn status(&self) -> FedcondStatus {
        match self {
            Self::Null(_) => FedcondStatus::NullArgument,
            Self::Utf8(_) | Self::Invalid(_) => FedcondStatus::InvalidArgument,
            Self::Stats(_) => FedcondStatus::Fingerprint,
            Self::Experiment(e) => match e.stage {
                Stage::Config => FedcondStatus::Config,
                Stage::Load => FedcondStatus::Load,
                Stage::Partition => FedcondStatus::Partition,
                Stage::Fingerprint => FedcondStatus::Fingerprint,
                Stage::Train => FedcondStatus::Train,
                Stage::Evaluate => FedcondStatus::Evaluate,
                Stage::Emit => FedcondStatus::Emit,
            },
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> FedcondStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            FedcondStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(_) => {
            set_last_error("internal panic".into());
            FedcondStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, FfiError> {
    if p.is_null() {
        Err(FfiError::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, FfiError> {
    CStr::from_ptr(non_null(p, what)?).to_str().map_err(|_| FfiError::Utf8(what))
}

/// Opaque experiment configuration.
pub struct FedcondConfig(ExperimentConfig);

/// Opaque run report.
pub struct FedcondReport {
    report: RunReport,
    names: Vec<CString>,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedcond_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fedcond_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Top-`l` eigenvalue fingerprint of one client.
///
/// `features` is row-major `rows x feature_dim`; `labels` has `rows`
/// entries below `class_count`; `out` receives `l` values.
///
/// # Safety
/// All pointers must be valid for the sizes given.
#[no_mangle]
pub unsafe extern "C" fn fedcond_fingerprint(
    features: *const f64,
    labels: *const usize,
    rows: usize,
    feature_dim: usize,
    class_count: usize,
    l: usize,
    out: *mut f64,
) -> FedcondStatus {
    guard(|| {
        let len = rows
            .checked_mul(feature_dim)
            .ok_or_else(|| FfiError::Invalid("rows * feature_dim overflows".into()))?;
        let x = slice::from_raw_parts(non_null(features, "features")?, len);
        let y = slice::from_raw_parts(non_null(labels, "labels")?, rows);
        let out = slice::from_raw_parts_mut(non_null(out, "out")? as *mut f64, l);
        let samples: Vec<Sample> = (0..rows)
            .map(|r| Sample {
                x: x[r * feature_dim..(r + 1) * feature_dim].to_vec(),
                y: y[r],
            })
            .collect();
        let z = build_augmented(&samples, &FeatureExtractor::identity(feature_dim), class_count)?;
        out.copy_from_slice(pca_eigenvalues(&z, l)?.as_slice());
        Ok(())
    })
}

/// Adjusted Rand index between two labelings of `n` items.
///
/// # Safety
/// `truth` and `estimate` must hold `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_ari(
    truth: *const usize,
    estimate: *const usize,
    n: usize,
    out: *mut f64,
) -> FedcondStatus {
    guard(|| {
        let a = slice::from_raw_parts(non_null(truth, "truth")?, n);
        let b = slice::from_raw_parts(non_null(estimate, "estimate")?, n);
        let out = non_null(out, "out")? as *mut f64;
        *out = fedcond::experiment::compute_ari(a, b)?;
        Ok(())
    })
}

/// Parses and validates a TOML experiment config.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_config_from_toml(text: *const c_char, out: *mut *mut FedcondConfig) -> FedcondStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut FedcondConfig;
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_toml(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(FedcondConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`fedcond_config_from_toml`].
#[no_mangle]
pub unsafe extern "C" fn fedcond_config_set_seed(config: *mut FedcondConfig, seed: u64) -> FedcondStatus {
    guard(|| {
        let cfg = non_null(config, "config")? as *mut FedcondConfig;
        (*cfg).0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`fedcond_config_from_toml`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fedcond_config_free(config: *mut FedcondConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the experiment. `data_root` may be null to use the environment
/// default. Nothing is written to disk; see [`fedcond_report_write`].
///
/// # Safety
/// `config` must be a live handle; `data_root` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_run(
    config: *const FedcondConfig,
    data_root: *const c_char,
    threads: u32,
    out: *mut *mut FedcondReport,
) -> FedcondStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut FedcondReport;
        *out = ptr::null_mut();
        let mut cfg = (*non_null(config, "config")?).0.clone();
        cfg.output_dir = None;
        let opts = RunOptions {
            threads: threads as usize,
            formats: Formats::BOTH,
            data_root: if data_root.is_null() {
                None
            } else {
                Some(PathBuf::from(str_arg(data_root, "data_root")?))
            },
        };
        let report = run_experiment(&cfg, &opts)?;
        let names = report
            .strategies
            .iter()
            .map(|s| CString::new(s.strategy.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(FedcondReport { report, names }));
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_report_strategy_count(report: *const FedcondReport, out: *mut usize) -> FedcondStatus {
    guard(|| {
        let r = &*non_null(report, "report")?;
        *(non_null(out, "out")? as *mut usize) = r.report.strategies.len();
        Ok(())
    })
}

/// Name, mean accuracy and ARI (NaN for non-clustering strategies) of the
/// `index`-th strategy. `name` stays valid while the report lives.
///
/// # Safety
/// `report` must be a live handle; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_report_strategy(
    report: *const FedcondReport,
    index: usize,
    name: *mut *const c_char,
    mean_accuracy: *mut f64,
    ari: *mut f64,
) -> FedcondStatus {
    guard(|| {
        let r = &*non_null(report, "report")?;
        let s = r
            .report
            .strategies
            .get(index)
            .ok_or_else(|| FfiError::Invalid(format!("strategy index {index} out of range")))?;
        *(non_null(name, "name")? as *mut *const c_char) = r.names[index].as_ptr();
        *(non_null(mean_accuracy, "mean_accuracy")? as *mut f64) = s.mean_accuracy;
        *(non_null(ari, "ari")? as *mut f64) = s.ari.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Full report as JSON. Free the string with [`fedcond_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedcond_report_to_json(report: *const FedcondReport, out: *mut *mut c_char) -> FedcondStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut c_char;
        *out = ptr::null_mut();
        let r = &*non_null(report, "report")?;
        let text = serde_json::to_string(&r.report).map_err(|e| FfiError::Invalid(e.to_string()))?;
        *out = CString::new(text).map_err(|e| FfiError::Invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Writes report files into `dir`.
///
/// # Safety
/// `report` must be a live handle; `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fedcond_report_write(
    report: *const FedcondReport,
    dir: *const c_char,
    json: bool,
    csv: bool,
) -> FedcondStatus {
    guard(|| {
        let r = &*non_null(report, "report")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        emit_report(&r.report, &dir, Formats { json, csv })?;
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`fedcond_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn fedcond_report_free(report: *mut FedcondReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fedcond_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
