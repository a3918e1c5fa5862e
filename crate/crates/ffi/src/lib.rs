//! C ABI over the mvfuse library.
//!
//! Every fallible entry point returns an [`MvfStatus`]; on failure the
//! message is kept per thread and read back with [`mvf_last_error`].
//! Arrays are passed as pointer plus length, matrices row-major. Trained
//! models cross the boundary as an opaque [`MvfModel`] handle that the
//! caller releases with [`mvf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mvfuse::gaussians::{poe_fuse, DiagGaussian};
use mvfuse::genetics::{hwe_exact_test, score_test};
use mvfuse::mvvae::MvvaeModel;
use mvfuse::pipeline::compute_metrics;
use mvfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MvfScoreTest {
    pub u: f64,
    pub v: f64,
    pub t_score: f64,
    pub p_value: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MvfMetrics {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// A trained model loaded from a checkpoint.
pub struct MvfModel {
    inner: MvvaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MvfStatus {
    match err {
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::Config(_) => MvfStatus::InvalidInput,
        Error::Data(_) | Error::Csv(_) | Error::Json(_) => MvfStatus::Data,
        Error::Numerical(_) => MvfStatus::Numerical,
        Error::Io { .. } => MvfStatus::Io,
    }
}

struct Fail(MvfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MvfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MvfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MvfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MvfStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mvf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mvf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Product-of-experts fusion of `n_experts` diagonal Gaussians of dimension
/// `dim`. `means` and `log_vars` are `n_experts × dim` row-major; the fused
/// mean and log-variance are written to `out_mean` and `out_log_var`.
///
/// # Safety
/// Input arrays must hold `n_experts * dim` values and outputs `dim` values.
#[no_mangle]
pub unsafe extern "C" fn mvf_poe_fuse(
    n_experts: usize,
    dim: usize,
    means: *const f64,
    log_vars: *const f64,
    out_mean: *mut f64,
    out_log_var: *mut f64,
) -> MvfStatus {
    guard(|| {
        let total = n_experts
            .checked_mul(dim)
            .ok_or_else(|| Fail(MvfStatus::InvalidInput, "expert array size overflows".into()))?;
        let mu = slice(means, total, "means")?;
        let lv = slice(log_vars, total, "log_vars")?;
        let experts = (0..n_experts)
            .map(|e| DiagGaussian::new(mu[e * dim..(e + 1) * dim].to_vec(), lv[e * dim..(e + 1) * dim].to_vec()))
            .collect::<mvfuse::Result<Vec<_>>>()?;
        let fused = poe_fuse(&experts)?;
        slice_mut(out_mean, dim, "out_mean")?.copy_from_slice(fused.mean());
        slice_mut(out_log_var, dim, "out_log_var")?.copy_from_slice(fused.log_var());
        Ok(())
    })
}

/// KL divergence from N(mean, exp(log_var)) to the standard normal.
///
/// # Safety
/// `mean` and `log_var` must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvf_kl_standard_normal(
    dim: usize,
    mean: *const f64,
    log_var: *const f64,
    out: *mut f64,
) -> MvfStatus {
    guard(|| {
        let g = DiagGaussian::new(slice(mean, dim, "mean")?.to_vec(), slice(log_var, dim, "log_var")?.to_vec())?;
        *slice_mut(out, 1, "out")?.first_mut().expect("one slot") = g.kl_to_standard_normal();
        Ok(())
    })
}

/// Exact Hardy-Weinberg p-value for the three genotype counts.
///
/// # Safety
/// `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvf_hwe_exact(n_hom1: u64, n_het: u64, n_hom2: u64, out_p: *mut f64) -> MvfStatus {
    guard(|| {
        slice_mut(out_p, 1, "out_p")?[0] = hwe_exact_test(n_hom1, n_het, n_hom2);
        Ok(())
    })
}

/// Score test of one SNP from covariate-adjusted residuals of length `n`.
///
/// # Safety
/// `y_resid` and `g_resid` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvf_score_test(
    n: usize,
    y_resid: *const f64,
    g_resid: *const f64,
    out: *mut MvfScoreTest,
) -> MvfStatus {
    guard(|| {
        let t = score_test(slice(y_resid, n, "y_resid")?, slice(g_resid, n, "g_resid")?)?;
        slice_mut(out, 1, "out")?[0] = MvfScoreTest {
            u: t.u,
            v: t.v,
            t_score: t.t_score,
            p_value: t.p_value,
        };
        Ok(())
    })
}

/// MAE, MAPE, RMSE and R² of `n` predictions.
///
/// # Safety
/// `y` and `y_hat` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvf_compute_metrics(
    n: usize,
    y: *const f64,
    y_hat: *const f64,
    out: *mut MvfMetrics,
) -> MvfStatus {
    guard(|| {
        let m = compute_metrics(slice(y, n, "y")?, slice(y_hat, n, "y_hat")?)?;
        slice_mut(out, 1, "out")?[0] = MvfMetrics {
            mae: m.mae,
            mape: m.mape,
            rmse: m.rmse,
            r2: m.r2,
        };
        Ok(())
    })
}

/// Loads a checkpoint written by `mvfuse train`. On success `*out` owns a
/// new handle; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_load(path: *const c_char, out: *mut *mut MvfModel) -> MvfStatus {
    if !out.is_null() {
        *out = ptr::null_mut();
    }
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(MvfStatus::InvalidInput, "path is not UTF-8".into()))?;
        let model = MvvaeModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(MvfModel { inner: model }));
        Ok(())
    })
}

/// Releases a handle from [`mvf_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_free(model: *mut MvfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of views, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_n_views(model: *const MvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().n_views())
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_latent_dim(model: *const MvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

/// Feature count of view `view`, or 0 when the handle is null or the index
/// is out of range.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_view_dim(model: *const MvfModel, view: usize) -> usize {
    model
        .as_ref()
        .and_then(|m| m.inner.config().view_dims.get(view).copied())
        .unwrap_or(0)
}

/// Posterior-mean latent of one subject. `views` holds `n_views` pointers,
/// each to that view's scaled features in [0, 1] or null when the view is
/// missing. Writes `latent_len` values, which must equal the latent
/// dimension.
///
/// # Safety
/// `model` must be a live handle, each non-null view pointer must hold the
/// view's feature count, and `out_latent` must hold `latent_len` values.
#[no_mangle]
pub unsafe extern "C" fn mvf_model_extract_latent(
    model: *const MvfModel,
    views: *const *const f64,
    n_views: usize,
    out_latent: *mut f64,
    latent_len: usize,
) -> MvfStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let cfg = model.config();
        if n_views != cfg.n_views() {
            return Err(Fail(
                MvfStatus::InvalidInput,
                format!("model has {} views, got {n_views}", cfg.n_views()),
            ));
        }
        if latent_len != model.latent_dim() {
            return Err(Fail(
                MvfStatus::InvalidInput,
                format!("latent dimension is {}, got buffer of {latent_len}", model.latent_dim()),
            ));
        }
        let ptrs = slice(views, n_views, "views")?;
        let rows: Vec<Option<&[f64]>> = ptrs
            .iter()
            .zip(&cfg.view_dims)
            .map(|(&p, &d)| (!p.is_null()).then(|| std::slice::from_raw_parts(p, d)))
            .collect();
        let z = model.extract_latent(&rows)?;
        slice_mut(out_latent, latent_len, "out_latent")?.copy_from_slice(&z);
        Ok(())
    })
}
