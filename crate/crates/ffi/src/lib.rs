//! C ABI over the spectral-cl laboratory.
//!
//! Every object crosses the boundary as an opaque handle that the caller
//! releases with the matching `spcl_*_free`. Fallible functions return
//! `SPCL_OK` (0) or a nonzero code and leave a thread-local message for
//! [`spcl_last_error_message`]. Positive codes mirror the library's error
//! kinds; negative codes are boundary errors (null pointers, bad UTF-8, short
//! buffers, panics).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use spectral_cl::config::ExperimentConfig;
use spectral_cl::covariance::{build_covariances, CovarianceSet};
use spectral_cl::data::{generate_dataset, Dataset};
use spectral_cl::error::Error;
use spectral_cl::metrics::feature_alignment;
use spectral_cl::objective::{loss_trace, LinearModel, LossKind};
use spectral_cl::solver::{gram_to_model, min_norm_for};
use spectral_cl::spectral::TieRule;
use spectral_cl::trainer::{train, TrainOptions, TrainTrace};

pub const SPCL_OK: i32 = 0;
pub const SPCL_ERR_NULL: i32 = -1;
pub const SPCL_ERR_UTF8: i32 = -2;
pub const SPCL_ERR_BUFFER: i32 = -3;
pub const SPCL_ERR_ARGUMENT: i32 = -4;
pub const SPCL_ERR_PANIC: i32 = -5;

pub const SPCL_LOSS_SCL: i32 = 0;
pub const SPCL_LOSS_UCL: i32 = 1;
pub const SPCL_LOSS_JOINT: i32 = 2;

/// An experiment configuration.
pub struct SpclConfig(ExperimentConfig);
/// A generated training set.
pub struct SpclDataset(Dataset);
/// Population covariances of a dataset.
pub struct SpclCovariances(CovarianceSet);
/// Linear embedding weights over the effective coordinates.
pub struct SpclModel(LinearModel);
/// Per-epoch training records.
pub struct SpclTrace(TrainTrace);

/// One epoch of a training trace.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpclEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub align_v1: f64,
    pub align_v2: f64,
    pub term1_norm: f64,
    pub term2_norm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(e.code(), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SPCL_ERR_NULL, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SPCL_OK
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SPCL_ERR_PANIC
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| Fail(SPCL_ERR_UTF8, format!("{what}: {e}")))
}

fn loss_kind(kind: i32, beta: f64) -> Result<LossKind, Fail> {
    match kind {
        SPCL_LOSS_SCL => Ok(LossKind::Scl),
        SPCL_LOSS_UCL => Ok(LossKind::Ucl),
        SPCL_LOSS_JOINT if (0.0..=1.0).contains(&beta) => Ok(LossKind::Joint(beta)),
        SPCL_LOSS_JOINT => Err(Fail(SPCL_ERR_ARGUMENT, format!("beta must be in [0, 1], got {beta}"))),
        _ => Err(Fail(SPCL_ERR_ARGUMENT, format!("unknown loss kind {kind}"))),
    }
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn spcl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spcl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_config_from_toml(toml: *const c_char, out: *mut *mut SpclConfig) -> i32 {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(text(toml, "toml")?)?;
        put(out, SpclConfig(cfg))
    })
}

/// One of the shipped presets: `c0`, `c1`, `c2` or `fig1`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_config_preset(name: *const c_char, out: *mut *mut SpclConfig) -> i32 {
    guard(|| {
        let cfg = match text(name, "name")? {
            "c0" => ExperimentConfig::c0(),
            "c1" => ExperimentConfig::c1(),
            "c2" => ExperimentConfig::c2(),
            "fig1" => ExperimentConfig::fig1(),
            other => return Err(Fail(SPCL_ERR_ARGUMENT, format!("unknown preset {other:?}"))),
        };
        put(out, SpclConfig(cfg))
    })
}

/// Replaces the seed of a configuration.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcl_config_set_seed(cfg: *mut SpclConfig, seed: u64) -> i32 {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.seed = seed;
        Ok(())
    })
}

/// Effective dimension `d + 1`, or 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcl_config_dim(cfg: *const SpclConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.dim())
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcl_config_free(cfg: *mut SpclConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generates the augmented training set of a configuration.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_dataset_generate(cfg: *const SpclConfig, out: *mut *mut SpclDataset) -> i32 {
    guard(|| {
        let ds = generate_dataset(&borrow(cfg, "config")?.0)?;
        put(out, SpclDataset(ds))
    })
}

/// Number of augmented examples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcl_dataset_len(ds: *const SpclDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.examples().len())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcl_dataset_free(ds: *mut SpclDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Builds the covariances of a dataset.
///
/// # Safety
/// `ds` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_covariances_build(ds: *const SpclDataset, out: *mut *mut SpclCovariances) -> i32 {
    guard(|| {
        let cov = build_covariances(&borrow(ds, "dataset")?.0)?;
        put(out, SpclCovariances(cov))
    })
}

/// # Safety
/// `cov` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcl_covariances_free(cov: *mut SpclCovariances) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Minimum-norm global minimizer with embedding dimension `p`. When the
/// target rank exceeds `p`, ties are broken toward the lowest coordinate.
/// `beta` is read only for the joint loss.
///
/// # Safety
/// `cov` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_solve_min_norm(
    cov: *const SpclCovariances,
    loss: i32,
    beta: f64,
    p: usize,
    out: *mut *mut SpclModel,
) -> i32 {
    guard(|| {
        let cov = &borrow(cov, "covariances")?.0;
        if p == 0 {
            return Err(Fail(SPCL_ERR_ARGUMENT, "p must be positive".into()));
        }
        let gram = min_norm_for(cov, loss_kind(loss, beta)?, p, TieRule::LowestIndex)?.swap_remove(0);
        put(out, SpclModel(gram_to_model(&gram, p)?))
    })
}

/// Trains from the configuration's seeded initialization with full-batch
/// gradient descent. Either output may be null if it is not wanted.
///
/// # Safety
/// `cfg` must be a live handle; `out_model` and `out_trace` must be null or
/// writable pointers.
#[no_mangle]
pub unsafe extern "C" fn spcl_train(
    cfg: *const SpclConfig,
    loss: i32,
    epochs: usize,
    out_model: *mut *mut SpclModel,
    out_trace: *mut *mut SpclTrace,
) -> i32 {
    guard(|| {
        let cfg = &borrow(cfg, "config")?.0;
        let opts = TrainOptions { gamma: false, ..TrainOptions::default() };
        let (model, trace) = train(cfg, loss_kind(loss, cfg.beta)?, epochs, &opts, &mut |_, _| {})?;
        if !out_model.is_null() {
            put(out_model, SpclModel(model))?;
        }
        if !out_trace.is_null() {
            put(out_trace, SpclTrace(trace))?;
        }
        Ok(())
    })
}

/// Writes the weight shape `(p, d + 1)`.
///
/// # Safety
/// `model` must be a live handle; `rows` and `cols` writable pointers.
#[no_mangle]
pub unsafe extern "C" fn spcl_model_shape(model: *const SpclModel, rows: *mut usize, cols: *mut usize) -> i32 {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        if rows.is_null() || cols.is_null() {
            return Err(null("shape output"));
        }
        *rows = m.p();
        *cols = m.dim();
        Ok(())
    })
}

/// Copies the weights row-major into `buf`, which must hold `p·(d+1)` values.
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn spcl_model_copy_weights(model: *const SpclModel, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let w = &borrow(model, "model")?.0.w;
        let need = w.nrows() * w.ncols();
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < need {
            return Err(Fail(SPCL_ERR_BUFFER, format!("buffer holds {len} values, {need} needed")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (i, row) in w.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[i * w.ncols() + j] = *v;
            }
        }
        Ok(())
    })
}

/// `‖W v_k‖` for feature `k ≥ 1`.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_model_alignment(model: *const SpclModel, k: usize, out: *mut f64) -> i32 {
    guard(|| {
        let a = feature_alignment(&borrow(model, "model")?.0, k)?;
        *out.as_mut().ok_or_else(|| null("output"))? = a;
        Ok(())
    })
}

/// Spectral loss of a model on the given covariances.
///
/// # Safety
/// `model` and `cov` must be live handles and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spcl_model_loss(
    model: *const SpclModel,
    cov: *const SpclCovariances,
    loss: i32,
    beta: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let l = loss_trace(&borrow(model, "model")?.0, &borrow(cov, "covariances")?.0, loss_kind(loss, beta)?)?;
        *out.as_mut().ok_or_else(|| null("output"))? = l;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcl_model_free(model: *mut SpclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of records (epochs plus the initial one), or 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spcl_trace_len(trace: *const SpclTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.records.len())
}

/// Copies up to `len` records into `buf`; the count written goes to
/// `written` when it is not null.
///
/// # Safety
/// `trace` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn spcl_trace_copy(
    trace: *const SpclTrace,
    buf: *mut SpclEpochRecord,
    len: usize,
    written: *mut usize,
) -> i32 {
    guard(|| {
        let recs = &borrow(trace, "trace")?.0.records;
        if buf.is_null() && len > 0 {
            return Err(null("buffer"));
        }
        let n = recs.len().min(len);
        for (i, r) in recs.iter().take(n).enumerate() {
            *buf.add(i) = SpclEpochRecord {
                epoch: r.epoch,
                loss: r.loss,
                align_v1: r.align_v1,
                align_v2: r.align_v2,
                term1_norm: r.term1_norm,
                term2_norm: r.term2_norm,
            };
        }
        if let Some(w) = written.as_mut() {
            *w = n;
        }
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spcl_trace_free(trace: *mut SpclTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
