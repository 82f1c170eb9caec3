//! C ABI over `rfr-core`.
//!
//! Every fallible function returns an [`RfrStatus`]; on failure the message
//! is available from [`rfr_last_error_message`] on the same thread. Objects
//! are opaque handles owned by the caller and released with their `_free`
//! function. Strings returned through `char **` out-parameters are released
//! with [`rfr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rfr_core::checks::{reports_to_json, run_battery, VerifyOptions, DEFAULT_ASCENT_STEPS};
use rfr_core::error::RfrError;
use rfr_core::linalg::DenseMatrix;
use rfr_core::net::{Activation, Network, NetworkSpec};
use rfr_core::rank::{self, rank_report, RankReport};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    ZeroRow = 4,
    NoConvergence = 5,
    Parse = 6,
    Io = 7,
    CheckFailed = 8,
    Panic = 9,
    Internal = 10,
}

/// Dense row-major matrix.
pub struct RfrMatrix {
    inner: DenseMatrix,
}

/// Rank metrics of one representation matrix.
pub struct RfrRankReport {
    inner: RankReport,
}

/// Feed-forward network with a linear classification head.
pub struct RfrNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &RfrError) -> RfrStatus {
    match e {
        RfrError::Dimension(_) | RfrError::ShapeMismatch | RfrError::NotSymmetric(_) => RfrStatus::Dimension,
        RfrError::ZeroRow(_) => RfrStatus::ZeroRow,
        RfrError::NoConvergence(_) => RfrStatus::NoConvergence,
        RfrError::Parse { .. }
        | RfrError::Json(_)
        | RfrError::TruncatedFile(_)
        | RfrError::LabelOutOfRange { .. } => RfrStatus::Parse,
        RfrError::Io { .. } => RfrStatus::Io,
        RfrError::NonFinite { .. }
        | RfrError::BadRho(_)
        | RfrError::BadSimplex(_)
        | RfrError::Config(_)
        | RfrError::Shrink { .. } => RfrStatus::InvalidArgument,
        _ => RfrStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (RfrStatus, String)>) -> RfrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RfrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rfr");
            RfrStatus::Panic
        }
    }
}

fn core(e: RfrError) -> (RfrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (RfrStatus, String) {
    (RfrStatus::NullPointer, format!("{name} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (RfrStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), (RfrStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), (RfrStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|e| (RfrStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (RfrStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RfrStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rfr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn rfr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `rows * cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut RfrMatrix,
) -> RfrStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or((RfrStatus::InvalidArgument, "size overflows".into()))?;
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let values = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let inner = DenseMatrix::new(rows, cols, values).map_err(core)?;
        write_out(out, RfrMatrix { inner }, "out")
    })
}

/// Reads a matrix in the `rows,cols` header CSV format.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_read_csv(path: *const c_char, out: *mut *mut RfrMatrix) -> RfrStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let inner = DenseMatrix::read_csv(path).map_err(core)?;
        write_out(out, RfrMatrix { inner }, "out")
    })
}

/// # Safety
/// `m` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_free(m: *mut RfrMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a valid matrix handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_rows(m: *const RfrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// # Safety
/// `m` must be a valid matrix handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_cols(m: *const RfrMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the row-major values into `out`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a valid handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfr_matrix_copy_data(m: *const RfrMatrix, out: *mut f64, len: usize) -> RfrStatus {
    guard(|| {
        let m = as_ref(m, "matrix")?;
        let data = m.inner.data();
        if len < data.len() {
            return Err((
                RfrStatus::InvalidArgument,
                format!("buffer holds {len} values, matrix has {}", data.len()),
            ));
        }
        if !data.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
        }
        Ok(())
    })
}

/// Rank, thresholded rank (energy fraction `rho`) and effective rank of `h`.
///
/// # Safety
/// `h` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report(h: *const RfrMatrix, rho: f64, out: *mut *mut RfrRankReport) -> RfrStatus {
    guard(|| {
        let h = as_ref(h, "matrix")?;
        let inner = rank_report(&h.inner, rho).map_err(core)?;
        write_out(out, RfrRankReport { inner }, "out")
    })
}

/// # Safety
/// `r` must be a valid report handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_rank(r: *const RfrRankReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.algebraic_rank)
}

/// # Safety
/// `r` must be a valid report handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_trank(r: *const RfrRankReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.trank)
}

/// # Safety
/// `r` must be a valid report handle or null (yields NaN).
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_erank(r: *const RfrRankReport) -> f64 {
    r.as_ref().map_or(f64::NAN, |r| r.inner.erank)
}

/// Number of eigenvalues in the report.
///
/// # Safety
/// `r` must be a valid report handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_len(r: *const RfrRankReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.eigenvalues.len())
}

/// Copies the eigenvalues (descending) into `out`, which holds `len` doubles.
///
/// # Safety
/// `r` must be a valid handle and `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_eigenvalues(r: *const RfrRankReport, out: *mut f64, len: usize) -> RfrStatus {
    guard(|| {
        let r = as_ref(r, "report")?;
        let ev = &r.inner.eigenvalues;
        if len < ev.len() {
            return Err((
                RfrStatus::InvalidArgument,
                format!("buffer holds {len} values, report has {}", ev.len()),
            ));
        }
        if !ev.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(ev.as_ptr(), out, ev.len());
        }
        Ok(())
    })
}

/// The report as the same JSON the `rfr rank` command prints.
///
/// # Safety
/// `r` must be a valid handle; `out` must be writable. Free the string with [`rfr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_json(r: *const RfrRankReport, out: *mut *mut c_char) -> RfrStatus {
    guard(|| {
        let r = as_ref(r, "report")?;
        write_string(out, r.inner.to_json())
    })
}

/// # Safety
/// `r` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn rfr_rank_report_free(r: *mut RfrRankReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Rank regularizer `Σ λ log λ` of `h` and its gradient with respect to `h`.
///
/// # Safety
/// `h` must be a valid handle; `loss` and `grad` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_loss_and_grad(h: *const RfrMatrix, loss: *mut f64, grad: *mut *mut RfrMatrix) -> RfrStatus {
    guard(|| {
        let h = as_ref(h, "matrix")?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let r = rank::rfr_loss_and_grad(&h.inner).map_err(core)?;
        write_out(grad, RfrMatrix { inner: r.grad_h }, "grad")?;
        *loss = r.loss;
        Ok(())
    })
}

/// He-initialized network: ReLU hidden layers, identity feature layer.
///
/// # Safety
/// `hidden` must point to `n_hidden` widths (may be null when `n_hidden` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_network_new(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut RfrNetwork,
) -> RfrStatus {
    guard(|| {
        if hidden.is_null() && n_hidden > 0 {
            return Err(null("hidden"));
        }
        let widths = if n_hidden == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(hidden, n_hidden).to_vec()
        };
        let spec = NetworkSpec {
            input_dim,
            hidden: widths,
            feature_dim,
            activation: Activation::Relu,
            feature_activation: Activation::Identity,
        };
        let inner = Network::new(&spec, num_classes, seed).map_err(core)?;
        write_out(out, RfrNetwork { inner }, "out")
    })
}

/// Restores a network from its JSON checkpoint.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_network_from_json(json: *const c_char, out: *mut *mut RfrNetwork) -> RfrStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let inner = Network::from_json(text).map_err(core)?;
        write_out(out, RfrNetwork { inner }, "out")
    })
}

/// JSON checkpoint of the network.
///
/// # Safety
/// `net` must be a valid handle; `out` must be writable. Free the string with [`rfr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn rfr_network_to_json(net: *const RfrNetwork, out: *mut *mut c_char) -> RfrStatus {
    guard(|| {
        let net = as_ref(net, "network")?;
        write_string(out, net.inner.to_json())
    })
}

/// Extractor features and head logits for every input row. Either output may be null.
///
/// # Safety
/// `net` and `inputs` must be valid handles; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfr_network_forward(
    net: *const RfrNetwork,
    inputs: *const RfrMatrix,
    features: *mut *mut RfrMatrix,
    logits: *mut *mut RfrMatrix,
) -> RfrStatus {
    guard(|| {
        let net = as_ref(net, "network")?;
        let x = as_ref(inputs, "inputs")?;
        let f = net.inner.forward(&x.inner).map_err(core)?;
        if !features.is_null() {
            write_out(features, RfrMatrix { inner: f.features }, "features")?;
        }
        if !logits.is_null() {
            write_out(logits, RfrMatrix { inner: f.logits }, "logits")?;
        }
        Ok(())
    })
}

/// # Safety
/// `net` must be a valid network handle or null (yields 0).
#[no_mangle]
pub unsafe extern "C" fn rfr_network_num_classes(net: *const RfrNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.num_classes())
}

/// # Safety
/// `net` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn rfr_network_free(net: *mut RfrNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Runs the verification battery for one seed and returns the reports as a
/// JSON array. A NaN `tolerance` keeps each check's own tolerance.
/// Returns `CheckFailed` (with the JSON still written) when any check fails.
///
/// # Safety
/// `dims` must point to `n_dims` values; `out` must be writable. Free the string with [`rfr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn rfr_verify_json(
    dims: *const usize,
    n_dims: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
    out: *mut *mut c_char,
) -> RfrStatus {
    guard(|| {
        if dims.is_null() || n_dims == 0 {
            return Err((RfrStatus::InvalidArgument, "at least one dimension is required".into()));
        }
        let opts = VerifyOptions {
            dims: std::slice::from_raw_parts(dims, n_dims).to_vec(),
            trials,
            ascent_steps: DEFAULT_ASCENT_STEPS,
            seeds: vec![seed],
            tolerance_override: (!tolerance.is_nan()).then_some(tolerance),
        };
        let reports = run_battery(&opts).map_err(core)?;
        let failed = reports.iter().filter(|r| !r.passed).count();
        let json = reports_to_json(&reports).map_err(core)?;
        write_string(out, json)?;
        if failed > 0 {
            return Err((RfrStatus::CheckFailed, format!("{failed} checks failed")));
        }
        Ok(())
    })
}
