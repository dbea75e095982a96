//! C interface to `domst`.
//!
//! Every entry point returns a [`DomstStatus`]; results come back through out
//! pointers. On failure, [`domst_last_error`] describes the most recent error
//! on the calling thread. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use domst::data::{generate_synthetic, load_watershed_dir, window_samples, GenConfig, Scaler, WatershedDataset};
use domst::error::Error;
use domst::eval::nse;
use domst::exec::TrainConfig;
use domst::model::{build_model, DomStModel, ModelConfig, Variant};
use domst::pipeline::{predict_discharge, train_watershed, DEFAULT_TRAIN_FRACTION};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    WorkerFailed = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomstVariant {
    Singlehead = 0,
    SingleheadPlusP = 1,
    MultiheadPlusP = 2,
}

fn variant_of(code: u32) -> Result<Variant, Error> {
    match code {
        c if c == DomstVariant::Singlehead as u32 => Ok(Variant::Singlehead),
        c if c == DomstVariant::SingleheadPlusP as u32 => Ok(Variant::SingleheadPlusP),
        c if c == DomstVariant::MultiheadPlusP as u32 => Ok(Variant::MultiheadPlusP),
        other => Err(Error::InvalidArgument(format!("unknown variant code {other}"))),
    }
}

/// A watershed: pixel metadata, daily precipitation and discharge.
pub struct DomstDataset(WatershedDataset);

/// A model together with the scaling fitted during its last training run.
pub struct DomstModel {
    model: DomStModel,
    scaler: Scaler,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SavedModel {
    scaler: Scaler,
    checkpoint: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DomstStatus {
    match e {
        Error::Shape { .. } | Error::WindowTooLong { .. } => DomstStatus::Shape,
        Error::NonFinite { .. } | Error::ZeroVariance | Error::Divergence { .. } => DomstStatus::Numeric,
        Error::Config(_) | Error::InvalidArgument(_) => DomstStatus::InvalidArgument,
        Error::Data { .. } | Error::Json(_) => DomstStatus::Parse,
        Error::Io { .. } => DomstStatus::Io,
        Error::WorkerFailed { .. } => DomstStatus::WorkerFailed,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> DomstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            DomstStatus::Ok
        }
        Ok(Err(Failure::Null(arg))) => {
            set_last_error(&format!("null pointer passed as `{arg}`"));
            DomstStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            DomstStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|e| Error::InvalidArgument(format!("`{name}` is not UTF-8: {e}")))?;
    Ok(Path::new(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &'static str) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `domst_*` call on the same thread.
#[no_mangle]
pub extern "C" fn domst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates a synthetic watershed with the default rain process.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn domst_dataset_generate(pixels: usize, days: usize, noise_rel: f64, seed: u64, out: *mut *mut DomstDataset) -> DomstStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let gen = GenConfig {
            pixels,
            days,
            noise_rel,
            seed,
            ..GenConfig::default()
        };
        let ds = generate_synthetic(&gen)?;
        write_out(out, Box::into_raw(Box::new(DomstDataset(ds))), "out")
    })
}

/// Loads a watershed directory holding `precip.csv`, `meta.csv` and `discharge.csv`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn domst_dataset_load(dir: *const c_char, out: *mut *mut DomstDataset) -> DomstStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ds = load_watershed_dir(dir)?;
        write_out(out, Box::into_raw(Box::new(DomstDataset(ds))), "out")
    })
}

/// # Safety
/// `dataset` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn domst_dataset_shape(dataset: *const DomstDataset, pixels: *mut usize, days: *mut usize) -> DomstStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        write_out(pixels, ds.num_pixels(), "pixels")?;
        write_out(days, ds.num_days(), "days")
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domst_dataset_free(dataset: *mut DomstDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Builds an untrained model for the dataset's pixels. `variant` is a
/// `DomstVariant` value; `heads` is ignored by the single-head variants.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn domst_model_new(dataset: *const DomstDataset, variant: u32, heads: usize, seed: u64, out: *mut *mut DomstModel) -> DomstStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let cfg = ModelConfig::new(Variant::MultiheadPlusP).with_heads(heads).with_seed(seed).for_variant(variant_of(variant)?);
        let model = build_model(&cfg, &ds.pixels)?;
        let handle = DomstModel {
            model,
            scaler: Scaler::default(),
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Re-initializes and trains the model on the first 80% of the dataset's
/// samples with the sequential executor, reporting held-out NSE.
///
/// # Safety
/// Handles must be live; `nse_test` may be null.
#[no_mangle]
pub unsafe extern "C" fn domst_model_train(model: *mut DomstModel, dataset: *const DomstDataset, epochs: usize, learning_rate: f64, nse_test: *mut f64) -> DomstStatus {
    guard(|| {
        let handle = deref_mut(model, "model")?;
        let ds = &deref(dataset, "dataset")?.0;
        if epochs == 0 || !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("epochs must be >= 1 and learning rate > 0, got {epochs} and {learning_rate}")).into());
        }
        let config = handle.model.config.clone();
        let mut tc = TrainConfig {
            epochs,
            shuffle_seed: config.seed,
            ..TrainConfig::default()
        };
        tc.adam.lr = learning_rate;
        let trained = train_watershed(ds, &config, &tc, DEFAULT_TRAIN_FRACTION)?;
        handle.model = trained.outcome.model;
        handle.scaler = trained.scaler;
        if !nse_test.is_null() {
            nse_test.write(trained.nse_test);
        }
        Ok(())
    })
}

/// Predicts discharge for every day that has a full lookback window.
/// Writes up to `capacity` values into `buffer` and the required length into
/// `len`; returns `Shape` if the buffer is too small.
///
/// # Safety
/// `buffer` must have room for `capacity` doubles (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn domst_model_predict(model: *const DomstModel, dataset: *const DomstDataset, buffer: *mut f64, capacity: usize, len: *mut usize) -> DomstStatus {
    guard(|| {
        let handle = deref(model, "model")?;
        let ds = &deref(dataset, "dataset")?.0;
        let samples = handle.scaler.transform_all(&window_samples(ds, handle.model.config.lookback)?);
        write_out(len, samples.len(), "len")?;
        if capacity < samples.len() {
            return Err(Error::shape("prediction buffer", &[samples.len()], &[capacity]).into());
        }
        if buffer.is_null() {
            return Err(Failure::Null("buffer"));
        }
        let sim = predict_discharge(&handle.model, &handle.scaler, &samples)?;
        ptr::copy_nonoverlapping(sim.as_ptr(), buffer, sim.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn domst_model_save(model: *const DomstModel, path: *const c_char) -> DomstStatus {
    guard(|| {
        let handle = deref(model, "model")?;
        let path = path_arg(path, "path")?;
        let saved = SavedModel {
            scaler: handle.scaler,
            checkpoint: handle.model.to_checkpoint_json()?,
        };
        let text = serde_json::to_string(&saved).map_err(Error::from)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn domst_model_load(path: *const c_char, out: *mut *mut DomstModel) -> DomstStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_str(&text).map_err(Error::from)?;
        let model = DomStModel::from_checkpoint_json(&saved.checkpoint)?;
        write_out(out, Box::into_raw(Box::new(DomstModel { model, scaler: saved.scaler })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn domst_model_free(model: *mut DomstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Nash-Sutcliffe efficiency of `sim` against `obs`, both of length `n`.
///
/// # Safety
/// `sim` and `obs` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn domst_nse(sim: *const f64, obs: *const f64, n: usize, out: *mut f64) -> DomstStatus {
    guard(|| {
        if sim.is_null() {
            return Err(Failure::Null("sim"));
        }
        if obs.is_null() {
            return Err(Failure::Null("obs"));
        }
        let (sim, obs) = (std::slice::from_raw_parts(sim, n), std::slice::from_raw_parts(obs, n));
        write_out(out, nse(sim, obs)?.nse, "out")
    })
}
