//! C ABI over the probdr library.
//!
//! Matrices cross the boundary as opaque `ProbdrMatrix` handles built from
//! row-major buffers. Every entry point returns a `ProbdrStatus`; on failure
//! `probdr_last_error_message` describes the problem for the calling thread.
//! Handles returned through out-parameters are owned by the caller and must
//! be released with `probdr_matrix_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DMatrix;
use probdr::eval::{procrustes, ProcrustesMode};
use probdr::graph_gp::{build_laplacian, matern_covariance, GraphGPHyper, LaplacianKind, MaternNu};
use probdr::workflow::{run_embed, run_predict, Algorithm, OptimizerSettings, PredictSettings};
use probdr::{DataMatrix, ErrorClass, ProbDrError};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbdrStatus {
    Ok = 0,
    NullPointer = 1,
    ConfigError = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Laplacian used to turn an adjacency matrix into a graph precision.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbdrLaplacian {
    Ordinary = 0,
    Normalized = 1,
}

/// Smoothness of the graph covariance: (L + beta I)^-1 or exp(-t L).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbdrSmoothness {
    MaternOne = 0,
    MaternInf = 1,
}

/// Opaque dense matrix of doubles.
pub struct ProbdrMatrix {
    inner: DMatrix<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure {
    status: ProbdrStatus,
    message: String,
}

impl From<ProbDrError> for Failure {
    fn from(e: ProbDrError) -> Self {
        let status = match e.class() {
            ErrorClass::Config => ProbdrStatus::ConfigError,
            ErrorClass::Data => ProbdrStatus::DataError,
            ErrorClass::Numerical => ProbdrStatus::NumericalError,
        };
        Failure { status, message: e.to_string() }
    }
}

fn failure(status: ProbdrStatus, message: impl Into<String>) -> Failure {
    Failure { status, message: message.into() }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> ProbdrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            ProbdrStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {what}"));
            ProbdrStatus::Panic
        }
    }
}

unsafe fn matrix_ref<'a>(m: *const ProbdrMatrix, what: &str) -> Result<&'a DMatrix<f64>, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| failure(ProbdrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn optional_json(text: *const c_char, what: &str) -> Result<Option<String>, Failure> {
    if text.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(text)
        .to_str()
        .map(|s| Some(s.to_string()))
        .map_err(|_| failure(ProbdrStatus::ConfigError, format!("{what} is not valid UTF-8")))
}

fn parse<T: serde::de::DeserializeOwned + Default>(text: Option<String>, what: &str) -> Result<T, Failure> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(&t).map_err(|e| failure(ProbdrStatus::ConfigError, format!("{what}: {e}"))),
    }
}

unsafe fn emit(out: *mut *mut ProbdrMatrix, m: DMatrix<f64>) {
    *out = Box::into_raw(Box::new(ProbdrMatrix { inner: m }));
}

fn check_out<T>(out: *mut T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(failure(ProbdrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

fn data_matrix(m: &DMatrix<f64>) -> Result<DataMatrix, Failure> {
    Ok(DataMatrix::new(m.clone())?)
}

/// Message for the most recent failed call on this thread, or an empty
/// string. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn probdr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn probdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` row-major doubles into a new matrix handle.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles and `out` must be a
/// valid location for a handle pointer.
#[no_mangle]
pub unsafe extern "C" fn probdr_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut ProbdrMatrix,
) -> ProbdrStatus {
    guard(|| {
        check_out(out, "out")?;
        if data.is_null() {
            return Err(failure(ProbdrStatus::NullPointer, "data is null"));
        }
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l > 0)
            .ok_or_else(|| failure(ProbdrStatus::ConfigError, format!("invalid shape {rows} x {cols}")))?;
        let values = std::slice::from_raw_parts(data, len);
        emit(out, DMatrix::from_row_slice(rows, cols, values));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn probdr_matrix_free(m: *mut ProbdrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn probdr_matrix_rows(m: *const ProbdrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.nrows())
}

/// Column count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn probdr_matrix_cols(m: *const ProbdrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.ncols())
}

/// Writes the matrix row-major into `out`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn probdr_matrix_copy_to(m: *const ProbdrMatrix, out: *mut f64, len: usize) -> ProbdrStatus {
    guard(|| {
        let inner = matrix_ref(m, "matrix")?;
        check_out(out, "out")?;
        let need = inner.len();
        if len < need {
            return Err(failure(ProbdrStatus::ConfigError, format!("buffer holds {len} values, need {need}")));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        let cols = inner.ncols();
        for (r, row) in inner.row_iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                dst[r * cols + c] = *v;
            }
        }
        Ok(())
    })
}

/// Embeds the rows of `data` into `q` dimensions.
///
/// `algorithm_json` is an algorithm object such as `{"name":"tsne","perplexity":30}`.
/// `optimizer_json` may be null for defaults. `out_noise` may be null; it
/// receives the fitted noise level of spectral methods and NaN otherwise.
///
/// # Safety
/// Pointers must be valid; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn probdr_embed_json(
    data: *const ProbdrMatrix,
    algorithm_json: *const c_char,
    q: usize,
    seed: u64,
    optimizer_json: *const c_char,
    out_embedding: *mut *mut ProbdrMatrix,
    out_noise: *mut f64,
) -> ProbdrStatus {
    guard(|| {
        let y = data_matrix(matrix_ref(data, "data")?)?;
        check_out(out_embedding, "out_embedding")?;
        let algo_text = optional_json(algorithm_json, "algorithm_json")?
            .ok_or_else(|| failure(ProbdrStatus::NullPointer, "algorithm_json is null"))?;
        let algorithm: Algorithm = serde_json::from_str(&algo_text)
            .map_err(|e| failure(ProbdrStatus::ConfigError, format!("algorithm_json: {e}")))?;
        let optimizer: OptimizerSettings = parse(optional_json(optimizer_json, "optimizer_json")?, "optimizer_json")?;
        let outcome = run_embed(&y, &algorithm, q, &optimizer, seed)?;
        if !out_noise.is_null() {
            *out_noise = outcome.noise.unwrap_or(f64::NAN);
        }
        emit(out_embedding, outcome.embedding.into_inner());
        Ok(())
    })
}

/// Procrustes residual between two embeddings with matching shapes. A
/// non-zero `allow_scale` also fits a global scale.
///
/// # Safety
/// `a` and `b` must be live handles and `out_residual` writable.
#[no_mangle]
pub unsafe extern "C" fn probdr_procrustes(
    a: *const ProbdrMatrix,
    b: *const ProbdrMatrix,
    allow_scale: i32,
    out_residual: *mut f64,
) -> ProbdrStatus {
    guard(|| {
        let (a, b) = (matrix_ref(a, "a")?, matrix_ref(b, "b")?);
        check_out(out_residual, "out_residual")?;
        let mode = if allow_scale != 0 { ProcrustesMode::Similarity } else { ProcrustesMode::Rigid };
        *out_residual = procrustes(a, b, mode)?.residual;
        Ok(())
    })
}

/// Graph covariance from a symmetric non-negative adjacency matrix:
/// (L + beta I)^-1 or exp(-t L), without the signal variance.
///
/// # Safety
/// `adjacency` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn probdr_graph_covariance(
    adjacency: *const ProbdrMatrix,
    laplacian: ProbdrLaplacian,
    smoothness: ProbdrSmoothness,
    beta: f64,
    t: f64,
    out: *mut *mut ProbdrMatrix,
) -> ProbdrStatus {
    guard(|| {
        let a = matrix_ref(adjacency, "adjacency")?;
        check_out(out, "out")?;
        let kind = match laplacian {
            ProbdrLaplacian::Ordinary => LaplacianKind::Ordinary,
            ProbdrLaplacian::Normalized => LaplacianKind::Normalized,
        };
        let nu = match smoothness {
            ProbdrSmoothness::MaternOne => MaternNu::One,
            ProbdrSmoothness::MaternInf => MaternNu::Inf,
        };
        let l = build_laplacian(a, kind)?;
        let hyper = GraphGPHyper { beta, t, ..GraphGPHyper::default() };
        emit(out, matern_covariance(&l, &hyper, nu)?.values);
        Ok(())
    })
}

/// Predicts the rows of `test` from `train` with the graph Gaussian process
/// workflow. `settings_json` may be null for defaults. `out_variance` may be
/// null; otherwise it receives a column of per-row predictive variances.
///
/// # Safety
/// Pointers must be valid; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn probdr_predict(
    train: *const ProbdrMatrix,
    test: *const ProbdrMatrix,
    settings_json: *const c_char,
    seed: u64,
    out_mean: *mut *mut ProbdrMatrix,
    out_variance: *mut *mut ProbdrMatrix,
) -> ProbdrStatus {
    guard(|| {
        let train = data_matrix(matrix_ref(train, "train")?)?;
        let test = data_matrix(matrix_ref(test, "test")?)?;
        check_out(out_mean, "out_mean")?;
        let settings: PredictSettings = parse(optional_json(settings_json, "settings_json")?, "settings_json")?;
        let outcome = run_predict(&train, &test, &settings, seed)?;
        if !out_variance.is_null() {
            let v = &outcome.variance;
            emit(out_variance, DMatrix::from_column_slice(v.len(), 1, v));
        }
        emit(out_mean, outcome.mean);
        Ok(())
    })
}
