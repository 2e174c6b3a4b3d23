//! C ABI for the adaptation engine.
//!
//! Conventions:
//! - Opaque handles (`PiclConfig`) own Rust state; create with the
//!   `picl_config_*` constructors and release with [`picl_config_free`].
//! - Every fallible call returns a [`PiclStatus`]; [`picl_last_error`]
//!   retrieves the thread-local message for the most recent failure.
//! - Strings are NUL-terminated UTF-8; buffers are caller-allocated.
//!
//! The matching header lives at `include/picl.h` (generated by cbindgen
//! from this file at build time).

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use libc::{c_char, size_t};

use picl_core::commands;
use picl_core::error::PiclError;
use picl_core::eval::{eer, min_dcf, DcfParams, TrialSet};
use picl_core::RunConfig;

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiclStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Arguments or configuration failed validation.
    InvalidArgument = 2,
    /// A prerequisite artifact (dataset, checkpoint) is missing.
    MissingArtifact = 3,
    /// Filesystem or parse failure.
    Io = 4,
    /// Training produced non-finite values.
    Divergence = 5,
    /// Unexpected internal failure.
    InternalError = 6,
}

/// Opaque run configuration handle.
pub struct PiclConfig {
    inner: RunConfig,
}

/// Verification metrics for both trial lists, filled by [`picl_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PiclEvalMetrics {
    /// Source-trial equal error rate, as a fraction.
    pub source_eer: f64,
    pub source_min_dcf: f64,
    /// Target-trial equal error rate, as a fraction.
    pub target_eer: f64,
    pub target_min_dcf: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &PiclError) -> PiclStatus {
    match err {
        PiclError::MissingArtifact { .. } => PiclStatus::MissingArtifact,
        PiclError::Divergence(_) => PiclStatus::Divergence,
        PiclError::Io(_) | PiclError::Parse(_) | PiclError::Checkpoint(_) => PiclStatus::Io,
        _ => PiclStatus::InvalidArgument,
    }
}

fn run_guarded<F: FnOnce() -> Result<(), PiclError>>(f: F) -> PiclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PiclStatus::Ok,
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_last_error("internal panic");
            PiclStatus::InternalError
        }
    }
}

/// # Safety
/// `s` must be NULL or a valid NUL-terminated string.
unsafe fn cstr_arg<'a>(s: *const c_char) -> Result<&'a str, PiclError> {
    if s.is_null() {
        return Err(PiclError::Config("NULL string argument".into()));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| PiclError::Config("argument is not valid UTF-8".into()))
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn picl_version() -> *const c_char {
    const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Copy the most recent error message for this thread into `buf`.
/// Returns the full message length in bytes (excluding the NUL); when the
/// buffer is too small the message is truncated.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be NULL (then
/// only the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn picl_last_error(buf: *mut c_char, cap: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Default configuration with the given root seed. Never NULL.
#[no_mangle]
pub extern "C" fn picl_config_default(seed: u64) -> *mut PiclConfig {
    let mut inner = RunConfig::default();
    inner.seed = seed;
    Box::into_raw(Box::new(PiclConfig { inner }))
}

/// Parse a key=value config file. Returns NULL on failure; see
/// [`picl_last_error`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn picl_config_load(path: *const c_char) -> *mut PiclConfig {
    let result = catch_unwind(|| -> Result<RunConfig, PiclError> {
        let path = cstr_arg(path)?;
        RunConfig::load(std::path::Path::new(path), None, None)
    });
    match result {
        Ok(Ok(inner)) => Box::into_raw(Box::new(PiclConfig { inner })),
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_last_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

/// Set one dotted config key (same keys as the config file). The value is
/// validated in context of the full configuration.
///
/// # Safety
/// `cfg` must be a live handle from a `picl_config_*` constructor; `key`
/// and `value` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn picl_config_set(
    cfg: *mut PiclConfig,
    key: *const c_char,
    value: *const c_char,
) -> PiclStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_last_error("NULL config handle");
        return PiclStatus::NullArgument;
    };
    run_guarded(|| {
        let key = cstr_arg(key)?;
        let value = cstr_arg(value)?;
        let mut candidate = cfg.inner.clone();
        candidate.set(key, value)?;
        candidate.validate()?;
        cfg.inner = candidate;
        Ok(())
    })
}

/// Read one dotted config key as text. Returns the value length in bytes
/// (excluding the NUL) or -1 if the key is unknown.
///
/// # Safety
/// `cfg` must be a live handle; `key` a valid string; `buf` NULL or at
/// least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn picl_config_get(
    cfg: *const PiclConfig,
    key: *const c_char,
    buf: *mut c_char,
    cap: size_t,
) -> isize {
    let Some(cfg) = cfg.as_ref() else {
        set_last_error("NULL config handle");
        return -1;
    };
    let Ok(key) = cstr_arg(key) else {
        return -1;
    };
    let Some((_, value)) = cfg
        .inner
        .effective_entries()
        .into_iter()
        .find(|(k, _)| k == key)
    else {
        set_last_error(&format!("unknown config key: {key}"));
        return -1;
    };
    let bytes = value.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
        *buf.add(n) = 0;
    }
    bytes.len() as isize
}

/// Release a config handle. NULL is a no-op.
///
/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn picl_config_free(cfg: *mut PiclConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn with_out_dir(
    cfg: *mut PiclConfig,
    out_dir: *const c_char,
    f: impl FnOnce(&RunConfig) -> Result<(), PiclError>,
) -> PiclStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_last_error("NULL config handle");
        return PiclStatus::NullArgument;
    };
    run_guarded(|| {
        if !out_dir.is_null() {
            cfg.inner.out_dir = PathBuf::from(cstr_arg(out_dir)?);
        }
        cfg.inner.validate()?;
        f(&cfg.inner)
    })
}

/// Generate the synthetic dataset and trial lists under the output
/// directory (`out_dir` overrides the configured one when non-NULL).
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or a valid string.
#[no_mangle]
pub unsafe extern "C" fn picl_generate(
    cfg: *mut PiclConfig,
    out_dir: *const c_char,
) -> PiclStatus {
    with_out_dir(cfg, out_dir, |cfg| commands::cmd_generate(cfg).map(|_| ()))
}

/// Pretrain on the generated source data; writes `pretrained.ckpt`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or a valid string.
#[no_mangle]
pub unsafe extern "C" fn picl_pretrain(
    cfg: *mut PiclConfig,
    out_dir: *const c_char,
) -> PiclStatus {
    with_out_dir(cfg, out_dir, |cfg| commands::cmd_pretrain(cfg).map(|_| ()))
}

/// Adapt the pretrained model; writes `adapted.ckpt` and `memory.ckpt`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or a valid string.
#[no_mangle]
pub unsafe extern "C" fn picl_adapt(cfg: *mut PiclConfig, out_dir: *const c_char) -> PiclStatus {
    with_out_dir(cfg, out_dir, |cfg| commands::cmd_adapt(cfg).map(|_| ()))
}

/// Run the momentum/lambda ablation grid; writes `sweep.csv`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or a valid string.
#[no_mangle]
pub unsafe extern "C" fn picl_sweep(cfg: *mut PiclConfig, out_dir: *const c_char) -> PiclStatus {
    with_out_dir(cfg, out_dir, |cfg| commands::cmd_sweep(cfg).map(|_| ()))
}

/// Score both trial lists with the configured checkpoint and fill
/// `metrics`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or a valid string;
/// `metrics` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn picl_evaluate(
    cfg: *mut PiclConfig,
    out_dir: *const c_char,
    metrics: *mut PiclEvalMetrics,
) -> PiclStatus {
    if metrics.is_null() {
        set_last_error("NULL metrics pointer");
        return PiclStatus::NullArgument;
    }
    with_out_dir(cfg, out_dir, |cfg| {
        let summary = commands::cmd_evaluate(cfg)?;
        *metrics = PiclEvalMetrics {
            source_eer: summary.source.eer,
            source_min_dcf: summary.source.min_dcf,
            target_eer: summary.target.eer,
            target_min_dcf: summary.target.min_dcf,
        };
        Ok(())
    })
}

unsafe fn trial_set(
    scores: *const f64,
    is_target: *const u8,
    n: size_t,
) -> Result<TrialSet, PiclError> {
    if scores.is_null() || is_target.is_null() {
        return Err(PiclError::Config("NULL trial arrays".into()));
    }
    let scores = std::slice::from_raw_parts(scores, n);
    let labels = std::slice::from_raw_parts(is_target, n);
    Ok(TrialSet::from_pairs(
        scores.iter().zip(labels).map(|(&s, &t)| (s, t != 0)),
    ))
}

/// Equal error rate of a scored trial list (`is_target[i]` nonzero marks a
/// same-identity trial). Outputs are written only on success.
///
/// # Safety
/// `scores` and `is_target` must hold `n` readable elements; `out_eer`
/// and `out_threshold` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn picl_eer(
    scores: *const f64,
    is_target: *const u8,
    n: size_t,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> PiclStatus {
    run_guarded(|| {
        let set = trial_set(scores, is_target, n)?;
        let (value, threshold) = eer(&set)?;
        if !out_eer.is_null() {
            *out_eer = value;
        }
        if !out_threshold.is_null() {
            *out_threshold = threshold;
        }
        Ok(())
    })
}

/// Normalized minimum detection cost of a scored trial list.
///
/// # Safety
/// Same contracts as [`picl_eer`].
#[no_mangle]
pub unsafe extern "C" fn picl_min_dcf(
    scores: *const f64,
    is_target: *const u8,
    n: size_t,
    c_fr: f64,
    c_fa: f64,
    p_target: f64,
    out_min_dcf: *mut f64,
    out_threshold: *mut f64,
) -> PiclStatus {
    run_guarded(|| {
        let set = trial_set(scores, is_target, n)?;
        let params = DcfParams {
            c_fr,
            c_fa,
            p_target,
        };
        let (value, threshold) = min_dcf(&set, &params)?;
        if !out_min_dcf.is_null() {
            *out_min_dcf = value;
        }
        if !out_threshold.is_null() {
            *out_threshold = threshold;
        }
        Ok(())
    })
}
