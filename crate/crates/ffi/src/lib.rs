//! C ABI over the `ctgsm` pipeline.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`/`*_load`
//! style function and released with the matching `*_free`. Every fallible
//! call returns a [`CtgsmStatus`]; on failure the message is available from
//! [`ctgsm_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ctgsm::classifier::{self, Classifier, ClassifierConfig, ClassifierSnapshot};
use ctgsm::data::{clean, load_csv, Dataset, SchemaSpec};
use ctgsm::pipeline::{self, BenchmarkSpec, PipelineConfig};
use ctgsm::Error;
use ndarray::{Array2, ArrayView2};

/// Result of every fallible call. The first four values match the
/// command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtgsmStatus {
    Ok = 0,
    ConfigError = 1,
    DataError = 2,
    Divergence = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Feature table with class labels.
pub struct CtgsmDataset {
    inner: Dataset,
}

/// Trained classifier.
pub struct CtgsmModel {
    inner: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn status_of(e: &Error) -> CtgsmStatus {
    match e.exit_code() {
        1 => CtgsmStatus::ConfigError,
        3 => CtgsmStatus::Divergence,
        _ => CtgsmStatus::DataError,
    }
}

struct Failure(CtgsmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: CtgsmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtgsmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtgsmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CtgsmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(CtgsmStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(CtgsmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

fn out_arg<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        fail(CtgsmStatus::NullPointer, "output pointer is null")
    } else {
        Ok(())
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(CtgsmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn matrix<'a>(data: *const f64, n_rows: usize, n_features: usize) -> Result<ArrayView2<'a, f64>, Failure> {
    if data.is_null() && n_rows * n_features > 0 {
        return fail(CtgsmStatus::NullPointer, "feature buffer is null");
    }
    let len = n_rows
        .checked_mul(n_features)
        .ok_or_else(|| Failure(CtgsmStatus::InvalidArgument, "matrix size overflows".into()))?;
    let slice: &[f64] = if len == 0 { &[] } else { std::slice::from_raw_parts(data, len) };
    ArrayView2::from_shape((n_rows, n_features), slice).or_else(|e| fail(CtgsmStatus::InvalidArgument, e.to_string()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ctgsm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctgsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and cleans a CSV file. Non-numeric columns other than the label
/// are dropped. `label_column` may be null for the default `Label`.
///
/// # Safety
/// `path` and `label_column` must be null or NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    out: *mut *mut CtgsmDataset,
) -> CtgsmStatus {
    guard(|| {
        out_arg(out)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let spec = match opt_str_arg(label_column, "label_column")? {
            Some(l) => SchemaSpec::Auto { label_column: l.to_string() },
            None => SchemaSpec::default(),
        };
        let data = clean(&load_csv(&[path], &spec)?)?;
        *out = Box::into_raw(Box::new(CtgsmDataset { inner: data }));
        Ok(())
    })
}

/// Generates the synthetic benchmark with every class count multiplied by
/// `scale` (1.0 gives the default sizes).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_benchmark(scale: f64, seed: u64, out: *mut *mut CtgsmDataset) -> CtgsmStatus {
    guard(|| {
        out_arg(out)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return fail(CtgsmStatus::InvalidArgument, "scale must be positive");
        }
        let data = pipeline::make_benchmark(&BenchmarkSpec::default().scaled(scale), seed)?;
        *out = Box::into_raw(Box::new(CtgsmDataset { inner: data }));
        Ok(())
    })
}

/// Builds a dataset from a row-major feature buffer and class ids in
/// `[0, n_classes)`. Class names are `class_names[0..n_classes]`.
///
/// # Safety
/// `features` must hold `n_rows * n_features` values, `labels` `n_rows`
/// values and `class_names` `n_classes` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_new(
    features: *const f64,
    n_rows: usize,
    n_features: usize,
    labels: *const u32,
    class_names: *const *const c_char,
    n_classes: usize,
    out: *mut *mut CtgsmDataset,
) -> CtgsmStatus {
    guard(|| {
        out_arg(out)?;
        let x = matrix(features, n_rows, n_features)?.to_owned();
        if (labels.is_null() && n_rows > 0) || (class_names.is_null() && n_classes > 0) {
            return fail(CtgsmStatus::NullPointer, "labels or class names are null");
        }
        let labels: Vec<usize> =
            if n_rows == 0 { Vec::new() } else { std::slice::from_raw_parts(labels, n_rows).iter().map(|&l| l as usize).collect() };
        let names = (0..n_classes)
            .map(|i| str_arg(*class_names.add(i), "class name").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let data = Dataset::from_parts(x, labels, names)?;
        *out = Box::into_raw(Box::new(CtgsmDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_n_rows(dataset: *const CtgsmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n_rows())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_n_features(dataset: *const CtgsmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n_features())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_n_classes(dataset: *const CtgsmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n_classes())
}

/// Copies the row-major features into `out` (`n_rows * n_features` values).
///
/// # Safety
/// `out` must be writable for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_features(dataset: *const CtgsmDataset, out: *mut f64, out_len: usize) -> CtgsmStatus {
    guard(|| {
        let d = &handle(dataset, "dataset")?.inner;
        copy_out(d.features.iter().copied(), d.features.len(), out, out_len)
    })
}

/// Copies the class ids into `out` (`n_rows` values).
///
/// # Safety
/// `out` must be writable for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_labels(dataset: *const CtgsmDataset, out: *mut u32, out_len: usize) -> CtgsmStatus {
    guard(|| {
        let d = &handle(dataset, "dataset")?.inner;
        copy_out(d.labels.iter().map(|&l| l as u32), d.labels.len(), out, out_len)
    })
}

unsafe fn copy_out<T>(values: impl Iterator<Item = T>, len: usize, out: *mut T, out_len: usize) -> Result<(), Failure> {
    if out_len < len {
        return fail(CtgsmStatus::BufferTooSmall, format!("need {len} values, buffer holds {out_len}"));
    }
    if len > 0 && out.is_null() {
        return fail(CtgsmStatus::NullPointer, "output buffer is null");
    }
    for (i, v) in values.enumerate() {
        out.add(i).write(v);
    }
    Ok(())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_dataset_free(dataset: *mut CtgsmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a classifier. `config_json` is a classifier configuration object
/// (missing fields take defaults) or null for all defaults.
///
/// # Safety
/// `dataset` must be a live handle, `config_json` null or a NUL-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_train(
    dataset: *const CtgsmDataset,
    config_json: *const c_char,
    out: *mut *mut CtgsmModel,
) -> CtgsmStatus {
    guard(|| {
        out_arg(out)?;
        let data = &handle(dataset, "dataset")?.inner;
        let cfg: ClassifierConfig = match opt_str_arg(config_json, "config_json")? {
            Some(j) => serde_json::from_str(j).or_else(|e| fail(CtgsmStatus::ConfigError, e.to_string()))?,
            None => ClassifierConfig::default(),
        };
        let (model, _) = classifier::fit(data, &cfg)?;
        *out = Box::into_raw(Box::new(CtgsmModel { inner: model }));
        Ok(())
    })
}

/// Loads a classifier snapshot written by the pipeline
/// (`artifacts/classifier.json`) or by [`ctgsm_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_load(path: *const c_char, out: *mut *mut CtgsmModel) -> CtgsmStatus {
    guard(|| {
        out_arg(out)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        if !path.exists() {
            return Err(Error::MissingFile(path).into());
        }
        let text = std::fs::read_to_string(&path).map_err(Error::from)?;
        let snap: ClassifierSnapshot = serde_json::from_str(&text).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(CtgsmModel { inner: Classifier::try_from(snap)? }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_save(model: *const CtgsmModel, path: *const c_char) -> CtgsmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let path = PathBuf::from(str_arg(path, "path")?);
        pipeline::write_json(&path, &ClassifierSnapshot::from(m))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_n_inputs(model: *const CtgsmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.network.input_dim())
}

/// Number of output classes (2 in binary mode).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_n_classes(model: *const CtgsmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_names.len())
}

/// Class probabilities for `n_rows` row-major feature rows, written
/// row-major into `out` (`n_rows * n_classes` values).
///
/// # Safety
/// `features` must hold `n_rows * n_features` values and `out` must be
/// writable for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_predict_proba(
    model: *const CtgsmModel,
    features: *const f64,
    n_rows: usize,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> CtgsmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let p: Array2<f64> = m.predict_proba(matrix(features, n_rows, n_features)?)?;
        copy_out(p.iter().copied(), p.len(), out, out_len)
    })
}

/// Predicted class ids (ties go to the lower id), `n_rows` values.
///
/// # Safety
/// As for [`ctgsm_model_predict_proba`].
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_predict(
    model: *const CtgsmModel,
    features: *const f64,
    n_rows: usize,
    n_features: usize,
    out: *mut u32,
    out_len: usize,
) -> CtgsmStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let pred = m.predict(matrix(features, n_rows, n_features)?)?;
        copy_out(pred.iter().map(|&c| c as u32), pred.len(), out, out_len)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_model_free(model: *mut CtgsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the whole pipeline. `config_json` is a pipeline configuration
/// object (null for defaults); a non-null `out_dir` overrides its output
/// directory. Reports are written there, including `manifest.json`.
///
/// # Safety
/// Both arguments must be null or NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ctgsm_run_pipeline(config_json: *const c_char, out_dir: *const c_char) -> CtgsmStatus {
    guard(|| {
        let mut cfg: PipelineConfig = match opt_str_arg(config_json, "config_json")? {
            Some(j) => serde_json::from_str(j).or_else(|e| fail(CtgsmStatus::ConfigError, e.to_string()))?,
            None => PipelineConfig::default(),
        };
        if let Some(d) = opt_str_arg(out_dir, "out_dir")? {
            cfg.out_dir = PathBuf::from(d);
        }
        pipeline::run_pipeline(&cfg)?;
        Ok(())
    })
}
