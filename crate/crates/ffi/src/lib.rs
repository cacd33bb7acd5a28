//! C interface to the `wce` robust mixture library.
//!
//! Every entry point returns a [`WceStatus`]; on failure a description is
//! available from [`wce_last_error_message`] on the calling thread. Fits are
//! opaque [`WceFit`] handles released with [`wce_fit_free`]. Matrices are
//! passed row-major. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wce::cli::fit_json;
use nalgebra::{DMatrix, DVector};
use wce::wce::{run_eee, Dataset, Family, FitConfig, FitResult, RegressionData};
use wce::WceError;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidConfig = 4,
    FitFailed = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Mixture family.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WceFamily {
    Gaussian = 0,
    SkewNormal = 1,
    Experts = 2,
}

impl From<WceFamily> for Family {
    fn from(f: WceFamily) -> Self {
        match f {
            WceFamily::Gaussian => Family::Gaussian,
            WceFamily::SkewNormal => Family::SkewNormal,
            WceFamily::Experts => Family::Experts,
        }
    }
}

/// Fit settings. A non-positive `eigen_ratio_c` disables the eigenvalue-ratio
/// constraint.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WceConfig {
    pub gamma: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub eigen_ratio_c: f64,
    pub seed: u64,
    pub alpha: f64,
    pub mc_draws: usize,
}

impl From<&WceConfig> for FitConfig {
    fn from(c: &WceConfig) -> Self {
        FitConfig {
            gamma: c.gamma,
            max_iter: c.max_iter,
            tol: c.tol,
            n_starts: c.n_starts,
            eigen_ratio_c: (c.eigen_ratio_c > 0.0).then_some(c.eigen_ratio_c),
            seed: c.seed,
            alpha: c.alpha,
            mc_draws: c.mc_draws,
        }
    }
}

/// Opaque fitted model.
pub struct WceFit {
    fit: FitResult,
    family: Family,
    config: FitConfig,
    n_obs: usize,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &WceError) -> WceStatus {
    match e {
        WceError::DimensionMismatch { .. } | WceError::ComponentMismatch { .. } => WceStatus::DimensionMismatch,
        WceError::InvalidConfig(_) => WceStatus::InvalidConfig,
        WceError::InvalidParams(_) | WceError::Domain(_) | WceError::MalformedCsv { .. } => WceStatus::InvalidArgument,
        WceError::FitFailed { .. } | WceError::Initialization(_) | WceError::Collapse(_) | WceError::EmptyInlierSet => {
            WceStatus::FitFailed
        }
        _ => WceStatus::Numerical,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (WceStatus, String)>) -> WceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            WceStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            set_error(format!("panic: {msg}"));
            WceStatus::Panic
        }
    }
}

fn lib_err(e: WceError) -> (WceStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (WceStatus, String) {
    (WceStatus::NullPointer, format!("{what} is null"))
}

fn fit_ref<'a>(fit: *const WceFit) -> Result<&'a WceFit, (WceStatus, String)> {
    // SAFETY: non-null handles come from `wce_fit_*` constructors and stay
    // valid until `wce_fit_free`.
    unsafe { fit.as_ref() }.ok_or_else(|| null("fit handle"))
}

fn input_slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], (WceStatus, String)> {
    if data.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` readable elements at `data`.
    Ok(unsafe { std::slice::from_raw_parts(data, len) })
}

fn output_slice<'a, T>(out: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], (WceStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err((WceStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
    }
    // SAFETY: the caller guarantees `len` writable elements at `out`.
    Ok(unsafe { std::slice::from_raw_parts_mut(out, len) })
}

fn checked_len(a: usize, b: usize) -> Result<usize, (WceStatus, String)> {
    a.checked_mul(b).ok_or((WceStatus::InvalidArgument, "size overflow".into()))
}

fn store(out: *mut *mut WceFit, value: WceFit) -> Result<(), (WceStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    // SAFETY: `out` is non-null and points to writable storage for a pointer.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library defaults: gamma 0.2, 1000 iterations, tolerance 1e-6, 10 starts,
/// eigenvalue ratio 10, alpha 0.01, 10000 Monte Carlo draws.
#[no_mangle]
pub extern "C" fn wce_config_default() -> WceConfig {
    let d = FitConfig::default();
    WceConfig {
        gamma: d.gamma,
        max_iter: d.max_iter,
        tol: d.tol,
        n_starts: d.n_starts,
        eigen_ratio_c: d.eigen_ratio_c.unwrap_or(0.0),
        seed: d.seed,
        alpha: d.alpha,
        mc_draws: d.mc_draws,
    }
}

/// Fits a Gaussian or skew-normal mixture with `k` components to the
/// row-major `n x p` matrix `data`.
///
/// # Safety
/// `data` must hold `n * p` doubles, `config` must be null (defaults) or
/// valid, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_points(
    family: WceFamily,
    data: *const f64,
    n: usize,
    p: usize,
    k: usize,
    config: *const WceConfig,
    out: *mut *mut WceFit,
) -> WceStatus {
    guard(|| {
        if family == WceFamily::Experts {
            return Err((WceStatus::InvalidArgument, "mixtures of experts need wce_fit_regression".into()));
        }
        if n == 0 || p == 0 {
            return Err((WceStatus::InvalidArgument, "data must be nonempty".into()));
        }
        let values = input_slice(data, checked_len(n, p)?, "data")?;
        let cfg = config_from(config)?;
        let dataset = Dataset::Points(DMatrix::from_row_slice(n, p, values));
        let fit = run_eee(family.into(), &dataset, k, &cfg).map_err(lib_err)?;
        store(out, WceFit { fit, family: family.into(), config: cfg, n_obs: n, dim: p })
    })
}

/// Fits a mixture of `k` Gaussian regression experts. `x` is the row-major
/// `n x q` design (include a column of ones for an intercept); `y` has `n`
/// responses. Gating uses the same design.
///
/// # Safety
/// `x` must hold `n * q` doubles, `y` must hold `n`, `config` must be null or
/// valid, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_regression(
    x: *const f64,
    y: *const f64,
    n: usize,
    q: usize,
    k: usize,
    config: *const WceConfig,
    out: *mut *mut WceFit,
) -> WceStatus {
    guard(|| {
        if n == 0 || q == 0 {
            return Err((WceStatus::InvalidArgument, "data must be nonempty".into()));
        }
        let xs = input_slice(x, checked_len(n, q)?, "x")?;
        let ys = input_slice(y, n, "y")?;
        let cfg = config_from(config)?;
        let reg = RegressionData::new(DMatrix::from_row_slice(n, q, xs), DVector::from_column_slice(ys)).map_err(lib_err)?;
        let fit = run_eee(Family::Experts, &Dataset::Regression(reg), k, &cfg).map_err(lib_err)?;
        store(out, WceFit { fit, family: Family::Experts, config: cfg, n_obs: n, dim: q })
    })
}

fn config_from(config: *const WceConfig) -> Result<FitConfig, (WceStatus, String)> {
    // SAFETY: callers pass null or a valid pointer.
    let cfg = match unsafe { config.as_ref() } {
        Some(c) => c.into(),
        None => FitConfig::default(),
    };
    cfg.validate().map_err(lib_err)?;
    Ok(cfg)
}

/// Releases a fit. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_free(fit: *mut WceFit) {
    if !fit.is_null() {
        // SAFETY: the handle was created by `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(fit) });
    }
}

/// Observations, components and dimension (`p`, or `q` for experts).
///
/// # Safety
/// `fit` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_shape(fit: *const WceFit, n_obs: *mut usize, n_components: *mut usize, dim: *mut usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        // SAFETY: non-null outputs are writable per the contract.
        unsafe {
            if let Some(o) = n_obs.as_mut() {
                *o = f.n_obs;
            }
            if let Some(o) = n_components.as_mut() {
                *o = f.fit.params.n_components();
            }
            if let Some(o) = dim.as_mut() {
                *o = f.dim;
            }
        }
        Ok(())
    })
}

/// Trimmed BIC, iterations and convergence flag of the selected start.
///
/// # Safety
/// `fit` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_summary(fit: *const WceFit, trimmed_bic: *mut f64, iterations: *mut usize, converged: *mut bool) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        // SAFETY: non-null outputs are writable per the contract.
        unsafe {
            if let Some(o) = trimmed_bic.as_mut() {
                *o = f.fit.trimmed_bic;
            }
            if let Some(o) = iterations.as_mut() {
                *o = f.fit.iterations;
            }
            if let Some(o) = converged.as_mut() {
                *o = f.fit.converged;
            }
        }
        Ok(())
    })
}

/// Cluster label of each observation into `out[0..n]`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_labels(fit: *const WceFit, out: *mut usize, len: usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        output_slice(out, len, f.n_obs)?[..f.n_obs].copy_from_slice(&f.fit.labels);
        Ok(())
    })
}

/// Outlier flags (1 = outlier) into `out[0..n]`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_outlier_flags(fit: *const WceFit, out: *mut u8, len: usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        let dst = output_slice(out, len, f.n_obs)?;
        for (d, flag) in dst.iter_mut().zip(&f.fit.outlier_flags) {
            *d = u8::from(*flag);
        }
        Ok(())
    })
}

/// Outlier scores (tail probabilities) into `out[0..n]`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_outlier_scores(fit: *const WceFit, out: *mut f64, len: usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        output_slice(out, len, f.n_obs)?[..f.n_obs].copy_from_slice(&f.fit.outlier_scores);
        Ok(())
    })
}

/// Row-major `n x K` posterior membership probabilities.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_responsibilities(fit: *const WceFit, out: *mut f64, len: usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        let u = &f.fit.responsibilities;
        let dst = output_slice(out, len, checked_len(u.nrows(), u.ncols())?)?;
        for (i, row) in u.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[i * u.ncols() + j] = *v;
            }
        }
        Ok(())
    })
}

/// Mixing proportions into `out[0..K]`; not available for experts, whose
/// proportions depend on the covariates.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_mixing(fit: *const WceFit, out: *mut f64, len: usize) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        let pi = f
            .fit
            .params
            .pi()
            .ok_or((WceStatus::InvalidArgument, "mixtures of experts have covariate-dependent proportions".to_string()))?;
        output_slice(out, len, pi.len())?[..pi.len()].copy_from_slice(pi);
        Ok(())
    })
}

/// The fit as a JSON document; release with [`wce_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wce_fit_to_json(fit: *const WceFit, out: *mut *mut c_char) -> WceStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        if out.is_null() {
            return Err(null("output string"));
        }
        let columns: Vec<String> = (1..=f.dim).map(|j| format!("x{j}")).collect();
        let doc = fit_json(&f.fit, f.family, f.fit.params.n_components(), &f.config, &columns, None);
        let text = serde_json::to_string(&doc).map_err(|e| (WceStatus::Numerical, e.to_string()))?;
        let c = CString::new(text).map_err(|e| (WceStatus::Numerical, e.to_string()))?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from [`wce_fit_to_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wce_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: the string was produced by `CString::into_raw`.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn wce_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version string (static).
#[no_mangle]
pub extern "C" fn wce_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains a nul byte"),
    };
    VERSION.as_ptr()
}
