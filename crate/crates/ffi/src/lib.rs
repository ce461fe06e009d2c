//! C ABI for the `nearood` detector.
//!
//! Conventions:
//! * Every fallible function returns a [`NoodStatus`]; results go through out-pointers.
//! * On failure, [`nood_last_error`] returns a message for the calling thread.
//! * Handles are opaque and owned by the caller. Free them with the matching `*_free`.
//! * Matrices are row-major `rows × cols` arrays of `double`.
//! * Labels are `int64_t`. A negative label marks an OOD row.
//! * Panics never cross the boundary. They surface as `NOOD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use nearood::gaussian::{
    fit_gaussians_with, BackgroundCovariance, FeatureSet, FitOptions, GaussianOodModel, ScoreMethod,
};
use nearood::metrics::{aupr, auroc, threshold_at_tpr, Positive};
use nearood::trainer::{extract_features, ClassifierParams};
use nearood::{Error, ErrorKind, Matrix};

/// Status codes. 2, 3 and 4 match the exit codes of the `nearood` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoodStatus {
    Ok = 0,
    /// Null pointer, invalid path string or size overflow.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoodScoreMethod {
    Md = 0,
    Rmd = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoodPositive {
    Id = 0,
    Ood = 1,
}

/// Fitted class-conditional Gaussian detector.
pub struct NoodModel(GaussianOodModel);

/// Trained classifier, used to turn raw inputs into penultimate-layer features.
pub struct NoodClassifier(ClassifierParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

enum Failure {
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(body: impl FnOnce() -> FfiResult<()>) -> NoodStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => NoodStatus::Ok,
        Ok(Err(Failure::Invalid(msg))) => {
            set_last_error(msg);
            NoodStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            match e.kind() {
                ErrorKind::Config => NoodStatus::Config,
                ErrorKind::Data => NoodStatus::Data,
                ErrorKind::Numerical => NoodStatus::Numerical,
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            NoodStatus::Panic
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure::Invalid(msg.into()))
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a, T>(ptr: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return invalid(format!("{name} is null"));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn output<'a, T>(ptr: *mut T, len: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return invalid(format!("{name} is null"));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut()
        .map_or_else(|| invalid(format!("{name} is null")), Ok)
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> FfiResult<&'a T> {
    ptr.as_ref()
        .map_or_else(|| invalid(format!("{name} is null")), Ok)
}

unsafe fn path_arg(ptr: *const c_char) -> FfiResult<PathBuf> {
    if ptr.is_null() {
        return invalid("path is null");
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => invalid("path is not valid UTF-8"),
    }
}

unsafe fn matrix(ptr: *const f64, rows: usize, cols: usize, name: &str) -> FfiResult<Matrix> {
    let len = rows
        .checked_mul(cols)
        .map_or_else(|| invalid(format!("{name}: size overflow")), Ok)?;
    let data = input(ptr, len, name)?;
    Ok(Matrix::new(rows, cols, data.to_vec())?)
}

fn labels_from(raw: &[i64]) -> Vec<Option<usize>> {
    raw.iter().map(|&l| usize::try_from(l).ok()).collect()
}

fn score_method(m: NoodScoreMethod) -> ScoreMethod {
    match m {
        NoodScoreMethod::Md => ScoreMethod::Md,
        NoodScoreMethod::Rmd => ScoreMethod::Rmd,
    }
}

/// Message for the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nood_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nood_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fits the detector on `rows × dim` features with labels in `[0, class_count)`.
/// `separate_background` selects a separately estimated background covariance for RMD.
///
/// # Safety
/// Pointers must be valid for the stated sizes. `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn nood_model_fit(
    features: *const f64,
    labels: *const i64,
    rows: usize,
    dim: usize,
    class_count: usize,
    separate_background: bool,
    out: *mut *mut NoodModel,
) -> NoodStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let m = matrix(features, rows, dim, "features")?;
        let labels = labels_from(input(labels, rows, "labels")?);
        let set = FeatureSet::new(m, labels, class_count, "ffi")?;
        let options = FitOptions {
            background: if separate_background {
                BackgroundCovariance::Separate
            } else {
                BackgroundCovariance::Shared
            },
            shrinkage: true,
        };
        let model = fit_gaussians_with(&set, &options)?;
        *out = Box::into_raw(Box::new(NoodModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn nood_model_free(model: *mut NoodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn nood_model_load(
    path: *const c_char,
    out: *mut *mut NoodModel,
) -> NoodStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = GaussianOodModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NoodModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn nood_model_save(
    model: *const NoodModel,
    path: *const c_char,
) -> NoodStatus {
    guard(|| {
        let model = handle(model, "model")?;
        model.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nood_model_dims(
    model: *const NoodModel,
    feature_dim: *mut usize,
    class_count: *mut usize,
) -> NoodStatus {
    guard(|| {
        let model = handle(model, "model")?;
        *out_ref(feature_dim, "feature_dim")? = model.0.feature_dim();
        *out_ref(class_count, "class_count")? = model.0.class_count();
        Ok(())
    })
}

/// Writes one score per row into `scores` (length `rows`). Higher means more in-distribution.
///
/// # Safety
/// `model` must be a live handle; arrays must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn nood_model_score(
    model: *const NoodModel,
    method: NoodScoreMethod,
    features: *const f64,
    rows: usize,
    dim: usize,
    scores: *mut f64,
) -> NoodStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let m = matrix(features, rows, dim, "features")?;
        let sv = model.0.score_matrix(&m, score_method(method))?;
        output(scores, rows, "scores")?.copy_from_slice(&sv.scores);
        Ok(())
    })
}

/// Squared Mahalanobis distance of `z` to class `class`.
///
/// # Safety
/// `model` must be a live handle; `z` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn nood_model_mahalanobis(
    model: *const NoodModel,
    z: *const f64,
    dim: usize,
    class: usize,
    out: *mut f64,
) -> NoodStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let z = input(z, dim, "z")?;
        *out_ref(out, "out")? = model.0.mahalanobis(z, class)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn nood_classifier_load(
    path: *const c_char,
    out: *mut *mut NoodClassifier,
) -> NoodStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let params = ClassifierParams::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(NoodClassifier(params)));
        Ok(())
    })
}

/// # Safety
/// `classifier` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nood_classifier_free(classifier: *mut NoodClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// # Safety
/// `classifier` must be a live handle; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn nood_classifier_dims(
    classifier: *const NoodClassifier,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    class_count: *mut usize,
) -> NoodStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        *out_ref(input_dim, "input_dim")? = c.0.input_dim();
        *out_ref(feature_dim, "feature_dim")? = c.0.feature_dim();
        *out_ref(class_count, "class_count")? = c.0.class_count();
        Ok(())
    })
}

/// Penultimate-layer features of `rows × input_dim` inputs, written row-major
/// into `features` (length `rows × feature_dim`).
///
/// # Safety
/// `classifier` must be a live handle; arrays must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn nood_classifier_features(
    classifier: *const NoodClassifier,
    inputs: *const f64,
    rows: usize,
    input_dim: usize,
    features: *mut f64,
) -> NoodStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        let x = matrix(inputs, rows, input_dim, "inputs")?;
        let set = extract_features(&c.0, &x, &vec![None; rows])?;
        output(features, rows * c.0.feature_dim(), "features")?
            .copy_from_slice(set.features.as_slice());
        Ok(())
    })
}

/// AUROC with ID as the positive class; ties count one half.
///
/// # Safety
/// Arrays must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn nood_auroc(
    id_scores: *const f64,
    n_id: usize,
    ood_scores: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> NoodStatus {
    guard(|| {
        let id = input(id_scores, n_id, "id_scores")?;
        let ood = input(ood_scores, n_ood, "ood_scores")?;
        *out_ref(out, "out")? = auroc(id, ood)?;
        Ok(())
    })
}

/// Average precision with the chosen positive class.
///
/// # Safety
/// Arrays must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn nood_aupr(
    id_scores: *const f64,
    n_id: usize,
    ood_scores: *const f64,
    n_ood: usize,
    positive: NoodPositive,
    out: *mut f64,
) -> NoodStatus {
    guard(|| {
        let id = input(id_scores, n_id, "id_scores")?;
        let ood = input(ood_scores, n_ood, "ood_scores")?;
        let positive = match positive {
            NoodPositive::Id => Positive::Id,
            NoodPositive::Ood => Positive::Ood,
        };
        *out_ref(out, "out")? = aupr(id, ood, positive)?;
        Ok(())
    })
}

/// Largest threshold that accepts at least `target_tpr` of the ID scores.
///
/// # Safety
/// `id_scores` must be valid for `n_id` reads.
#[no_mangle]
pub unsafe extern "C" fn nood_threshold_at_tpr(
    id_scores: *const f64,
    n_id: usize,
    target_tpr: f64,
    out: *mut f64,
) -> NoodStatus {
    guard(|| {
        let id = input(id_scores, n_id, "id_scores")?;
        *out_ref(out, "out")? = threshold_at_tpr(id, target_tpr)?;
        Ok(())
    })
}
