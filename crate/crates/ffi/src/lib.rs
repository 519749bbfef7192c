//! C ABI over the rdbssl library.
//!
//! Every fallible call returns an [`RdbsslStatus`]; on failure the message is
//! kept per thread and read with [`rdbssl_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Strings returned by the library stay valid until the
//! owning handle is freed (or, for the error message, until the next failing
//! call on the same thread).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use rdbssl::pipeline::{run_pipeline, selftest, ExperimentConfig, RunManifest};
use rdbssl::synth::{Generated, TrapSpec};
use rdbssl::Error;

/// Status codes. Positive values match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RdbsslStatus {
    Ok = 0,
    ConfigError = 1,
    DataError = 2,
    NumericError = 3,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Parsed and validated experiment configuration.
pub struct RdbsslConfig {
    inner: ExperimentConfig,
}

/// Result of a completed pipeline run.
pub struct RdbsslRun {
    manifest: RunManifest,
    manifest_json: CString,
    metrics_csv: CString,
}

/// A generated synthetic dataset.
pub struct RdbsslDataset {
    inner: Generated,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RdbsslStatus {
    match e.exit_code() {
        1 => RdbsslStatus::ConfigError,
        3 => RdbsslStatus::NumericError,
        _ => RdbsslStatus::DataError,
    }
}

struct Fail(RdbsslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RdbsslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RdbsslStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RdbsslStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RdbsslStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RdbsslStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL if none.
#[no_mangle]
pub extern "C" fn rdbssl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rdbssl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// ROC-AUC of `scores` against 0/1 `labels`, ties counted as one half.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> RdbsslStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        write_out(out, rdbssl::eval::roc_auc(s, &l)?)
    })
}

/// Plug-in mutual information in bits between two discrete samples.
///
/// # Safety
/// `x` and `y` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_mutual_information(
    x: *const u32,
    y: *const u32,
    n: usize,
    out: *mut f64,
) -> RdbsslStatus {
    guard(|| {
        let v = rdbssl::synth::mi_discrete(slice(x, n, "x")?, slice(y, n, "y")?)?;
        write_out(out, v)
    })
}

/// Plug-in co-information `I(x;y) - I(x;y|z)` in bits.
///
/// # Safety
/// `x`, `y` and `z` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_co_information(
    x: *const u32,
    y: *const u32,
    z: *const u32,
    n: usize,
    out: *mut f64,
) -> RdbsslStatus {
    guard(|| {
        let v = rdbssl::synth::co_information(slice(x, n, "x")?, slice(y, n, "y")?, slice(z, n, "z")?)?;
        write_out(out, v)
    })
}

/// Loads and validates a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_config_load(path: *const c_char, out: *mut *mut RdbsslConfig) -> RdbsslStatus {
    guard(|| {
        let inner = ExperimentConfig::load(c_str(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(RdbsslConfig { inner })))
    })
}

/// Parses configuration text. Relative data paths resolve against `base_dir`,
/// which may be NULL for the current directory.
///
/// # Safety
/// `text` must be NUL-terminated, `base_dir` NUL-terminated or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_config_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut RdbsslConfig,
) -> RdbsslStatus {
    guard(|| {
        let base = if base_dir.is_null() { "." } else { c_str(base_dir, "base_dir")? };
        let inner = ExperimentConfig::parse(c_str(text, "text")?, Path::new(base))?;
        write_out(out, Box::into_raw(Box::new(RdbsslConfig { inner })))
    })
}

/// Replaces the output directory.
///
/// # Safety
/// `config` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_config_set_output(config: *mut RdbsslConfig, dir: *const c_char) -> RdbsslStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.inner.run.output = PathBuf::from(c_str(dir, "dir")?);
        Ok(())
    })
}

/// Replaces the seed list with a single seed.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_config_set_seed(config: *mut RdbsslConfig, seed: u64) -> RdbsslStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        cfg.inner.run.seeds = vec![seed];
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_config_free(config: *mut RdbsslConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the full pipeline for `config`.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_run_pipeline(config: *const RdbsslConfig, out: *mut *mut RdbsslRun) -> RdbsslStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let manifest = run_pipeline(&cfg.inner)?;
        let json = serde_json::to_string(&manifest).map_err(Error::from)?;
        let run = RdbsslRun {
            manifest_json: CString::new(json).expect("JSON has no nul"),
            metrics_csv: CString::new(manifest.metrics_csv.to_string_lossy().into_owned())
                .map_err(|_| Fail(RdbsslStatus::InvalidArgument, "path contains nul".into()))?,
            manifest,
        };
        write_out(out, Box::into_raw(Box::new(run)))
    })
}

/// Run manifest as JSON, owned by `run`.
///
/// # Safety
/// `run` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_run_manifest_json(run: *const RdbsslRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.manifest_json.as_ptr())
}

/// Path of the metrics CSV, owned by `run`.
///
/// # Safety
/// `run` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_run_metrics_csv(run: *const RdbsslRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.metrics_csv.as_ptr())
}

/// Number of checkpoints the run produced, 0 for NULL.
///
/// # Safety
/// `run` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_run_checkpoint_count(run: *const RdbsslRun) -> usize {
    run.as_ref().map_or(0, |r| r.manifest.checkpoints.len())
}

/// # Safety
/// `run` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_run_free(run: *mut RdbsslRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Generates a synthetic trap from a TOML spec such as
/// `kind = "xor_trap"\nn = 1000`.
///
/// # Safety
/// `spec_toml` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_synth_generate(
    spec_toml: *const c_char,
    seed: u64,
    out: *mut *mut RdbsslDataset,
) -> RdbsslStatus {
    guard(|| {
        let spec: TrapSpec = toml::from_str(c_str(spec_toml, "spec_toml")?)
            .map_err(|e| Fail(RdbsslStatus::ConfigError, e.to_string()))?;
        let inner = spec.generate(seed)?;
        write_out(out, Box::into_raw(Box::new(RdbsslDataset { inner })))
    })
}

/// Rows in the target table, 0 for NULL.
///
/// # Safety
/// `dataset` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_dataset_rows(dataset: *const RdbsslDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.labels.len())
}

/// Copies the 0/1 labels into `out`, which holds `capacity` bytes.
///
/// # Safety
/// `dataset` must come from this library; `out` must hold `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_dataset_labels(
    dataset: *const RdbsslDataset,
    out: *mut u8,
    capacity: usize,
) -> RdbsslStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let labels = &d.inner.labels;
        if capacity < labels.len() {
            return Err(Fail(
                RdbsslStatus::InvalidArgument,
                format!("buffer holds {capacity}, need {}", labels.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        for (i, &y) in labels.iter().enumerate() {
            out.add(i).write(u8::from(y));
        }
        Ok(())
    })
}

/// Writes schema, CSV tables and metadata under `dir`.
///
/// # Safety
/// `dataset` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_dataset_write(dataset: *const RdbsslDataset, dir: *const c_char) -> RdbsslStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        d.inner.write(c_str(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_dataset_free(dataset: *mut RdbsslDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Runs the built-in checks and reports how many passed.
///
/// # Safety
/// `passed` and `total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdbssl_selftest(passed: *mut usize, total: *mut usize) -> RdbsslStatus {
    guard(|| {
        let checks = selftest();
        write_out(passed, checks.iter().filter(|c| c.passed).count())?;
        write_out(total, checks.len())
    })
}
