//! C ABI over `ssi_core`.
//!
//! Every entry point returns an [`SsiStatus`]. On failure the message is kept in a
//! thread-local buffer readable through [`ssi_last_error_message`]. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ssi_core::analysis::{self, ConvolutionSpec, W2Config};
use ssi_core::config::{reference_cloud, run_method, ExperimentConfig, TargetConfig};
use ssi_core::flow::{run_ssi, FlowConfig};
use ssi_core::targets::{make_gmm, Covariance, FnTarget, GaussianMixtureSpec, TargetDensity};
use ssi_core::{Error, ParticleCloud};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Unsupported = 8,
    Panic = 9,
}

/// Opaque target density.
pub struct SsiTarget {
    inner: Box<dyn TargetDensity>,
}

/// Opaque particle cloud, row-major `n x dim`.
pub struct SsiCloud {
    inner: ParticleCloud,
}

/// Unnormalized log-density callback. Must be safe to call from several threads.
pub type SsiLogDensityFn = Option<unsafe extern "C" fn(x: *const f64, dim: usize, user_data: *mut c_void) -> f64>;

/// Score callback writing `dim` values into `out`. Must be safe to call from several threads.
pub type SsiScoreFn = Option<unsafe extern "C" fn(x: *const f64, dim: usize, out: *mut f64, user_data: *mut c_void)>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(SsiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_) | Error::ConfigParse(_) => SsiStatus::InvalidConfig,
            Error::DimensionMismatch { .. } => SsiStatus::DimensionMismatch,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => SsiStatus::Io,
            Error::Domain(_) | Error::TimeOutOfRange { .. } | Error::InsufficientSamples { .. } => {
                SsiStatus::InvalidArgument
            }
            _ => SsiStatus::Numerical,
        };
        Fail(code, e.to_string())
    }
}

fn bad(msg: &str) -> Fail {
    Fail(SsiStatus::InvalidArgument, msg.to_string())
}

fn null(what: &str) -> Fail {
    Fail(SsiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsiStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SsiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(&format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn target_ref<'a>(p: *const SsiTarget) -> Result<&'a SsiTarget, Fail> {
    p.as_ref().ok_or_else(|| null("target"))
}

unsafe fn cloud_ref<'a>(p: *const SsiCloud) -> Result<&'a SsiCloud, Fail> {
    p.as_ref().ok_or_else(|| null("cloud"))
}

unsafe fn out_ptr<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn parse_text<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Fail> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        serde_json::from_str(text).map_err(|e| Fail(SsiStatus::InvalidConfig, e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| Fail(SsiStatus::InvalidConfig, e.to_string()))
    }
}

/// Static description of a status code. Never null.
#[no_mangle]
pub extern "C" fn ssi_status_string(status: SsiStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SsiStatus::Ok => b"ok\0",
        SsiStatus::NullPointer => b"null pointer\0",
        SsiStatus::InvalidArgument => b"invalid argument\0",
        SsiStatus::InvalidConfig => b"invalid configuration\0",
        SsiStatus::DimensionMismatch => b"dimension mismatch\0",
        SsiStatus::Numerical => b"numerical failure\0",
        SsiStatus::Io => b"i/o error\0",
        SsiStatus::BufferTooSmall => b"buffer too small\0",
        SsiStatus::Unsupported => b"unsupported\0",
        SsiStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Message of the last failed call on this thread. Empty after a success.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ssi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ssi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a target from a `[target]` table given as TOML or JSON, e.g.
/// `name = "mog_grid"` or `{"name": "gaussian", "dim": 3}`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_from_spec(spec: *const c_char, out: *mut *mut SsiTarget) -> SsiStatus {
    guard(|| {
        let text = str_arg(spec, "spec")?;
        let cfg: TargetConfig = parse_text(text)?;
        let inner = cfg.build()?;
        out_ptr(out, Box::into_raw(Box::new(SsiTarget { inner })))
    })
}

/// Isotropic Gaussian mixture with `k` components in `dim` dimensions.
/// `means` is row-major `k x dim`; `weights` may be null for equal weights.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_gmm_isotropic(
    k: usize,
    dim: usize,
    means: *const f64,
    weights: *const f64,
    variance: f64,
    out: *mut *mut SsiTarget,
) -> SsiStatus {
    guard(|| {
        if k == 0 || dim == 0 {
            return Err(bad("k and dim must be positive"));
        }
        let flat = slice_arg(means, k * dim, "means")?;
        let weights =
            if weights.is_null() { vec![1.0 / k as f64; k] } else { slice_arg(weights, k, "weights")?.to_vec() };
        let spec = GaussianMixtureSpec {
            means: flat.chunks(dim).map(<[f64]>::to_vec).collect(),
            weights,
            covariance: Covariance::Isotropic(variance),
        };
        let inner = Box::new(make_gmm(&spec)?);
        out_ptr(out, Box::into_raw(Box::new(SsiTarget { inner })))
    })
}

struct Callbacks {
    log_density: unsafe extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    score: unsafe extern "C" fn(*const f64, usize, *mut f64, *mut c_void),
    user_data: usize,
}

/// Target defined by caller-supplied callbacks. The callbacks may be invoked concurrently
/// and `user_data` must outlive the returned handle.
///
/// # Safety
/// `name` must be a NUL-terminated string or null; the callbacks must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_from_callbacks(
    name: *const c_char,
    dim: usize,
    log_density: SsiLogDensityFn,
    score: SsiScoreFn,
    user_data: *mut c_void,
    out: *mut *mut SsiTarget,
) -> SsiStatus {
    guard(|| {
        let name = if name.is_null() { "callback" } else { str_arg(name, "name")? };
        let (Some(log_density), Some(score)) = (log_density, score) else {
            return Err(null("callback"));
        };
        if dim == 0 {
            return Err(bad("dim must be positive"));
        }
        let cb = std::sync::Arc::new(Callbacks { log_density, score, user_data: user_data as usize });
        let cb2 = cb.clone();
        let target = FnTarget::new(
            name,
            dim,
            move |x| unsafe { (cb.log_density)(x.as_ptr(), x.len(), cb.user_data as *mut c_void) },
            move |x, g| unsafe { (cb2.score)(x.as_ptr(), x.len(), g.as_mut_ptr(), cb2.user_data as *mut c_void) },
        );
        out_ptr(out, Box::into_raw(Box::new(SsiTarget { inner: Box::new(target) })))
    })
}

/// # Safety
/// `target` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_free(target: *mut SsiTarget) {
    if !target.is_null() {
        drop(Box::from_raw(target));
    }
}

/// Dimension of the target, or 0 for a null handle.
///
/// # Safety
/// `target` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_dim(target: *const SsiTarget) -> usize {
    target.as_ref().map_or(0, |t| t.inner.dim())
}

/// # Safety
/// `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_log_density(
    target: *const SsiTarget,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> SsiStatus {
    guard(|| {
        let t = target_ref(target)?;
        if dim != t.inner.dim() {
            return Err(Error::DimensionMismatch { expected: t.inner.dim(), got: dim }.into());
        }
        let x = slice_arg(x, dim, "x")?;
        out_ptr(out, t.inner.log_density(x))
    })
}

/// # Safety
/// `x` and `out` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_score(
    target: *const SsiTarget,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> SsiStatus {
    guard(|| {
        let t = target_ref(target)?;
        if dim != t.inner.dim() {
            return Err(Error::DimensionMismatch { expected: t.inner.dim(), got: dim }.into());
        }
        let x = slice_arg(x, dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        t.inner.score_into(x, std::slice::from_raw_parts_mut(out, dim));
        Ok(())
    })
}

/// Exact draws from the target. Fails with `Unsupported` when the target has no sampler.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_target_sample(
    target: *const SsiTarget,
    n: usize,
    seed: u64,
    out: *mut *mut SsiCloud,
) -> SsiStatus {
    guard(|| {
        let t = target_ref(target)?;
        let cloud = reference_cloud(t.inner.as_ref(), n, seed)
            .ok_or_else(|| Fail(SsiStatus::Unsupported, format!("{} has no exact sampler", t.inner.name())))?;
        out_ptr(out, Box::into_raw(Box::new(SsiCloud { inner: cloud })))
    })
}

/// Runs the stochastic-interpolant sampler. `flow_config` is TOML or JSON for the flow
/// settings; null selects the defaults.
///
/// # Safety
/// `flow_config` must be NUL-terminated or null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_run(
    target: *const SsiTarget,
    flow_config: *const c_char,
    seed: u64,
    out: *mut *mut SsiCloud,
) -> SsiStatus {
    guard(|| {
        let t = target_ref(target)?;
        let cfg: FlowConfig = if flow_config.is_null() {
            FlowConfig::default()
        } else {
            parse_text(str_arg(flow_config, "flow_config")?)?
        };
        cfg.validate()?;
        let record = run_ssi(&cfg, t.inner.as_ref(), seed).map_err(|f| Fail::from(Error::from(f)))?;
        let cloud = record.cloud.ok_or_else(|| Fail(SsiStatus::Numerical, "run produced no cloud".into()))?;
        out_ptr(out, Box::into_raw(Box::new(SsiCloud { inner: cloud })))
    })
}

/// Runs a complete experiment config (any method) and returns the final cloud.
///
/// # Safety
/// `config` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_run_experiment(config: *const c_char, out: *mut *mut SsiCloud) -> SsiStatus {
    guard(|| {
        let text = str_arg(config, "config")?;
        let cfg = if text.trim_start().starts_with('{') {
            ExperimentConfig::from_json_str(text)?
        } else {
            ExperimentConfig::from_toml_str(text)?
        };
        cfg.validate()?;
        let target = cfg.target.build()?;
        let output = run_method(&cfg, target.as_ref()).map_err(|f| Fail::from(f.error))?;
        out_ptr(out, Box::into_raw(Box::new(SsiCloud { inner: output.cloud })))
    })
}

/// Copies `n * dim` row-major values into a new cloud.
///
/// # Safety
/// `data` must hold `n * dim` values.
#[no_mangle]
pub unsafe extern "C" fn ssi_cloud_from_buffer(
    data: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut SsiCloud,
) -> SsiStatus {
    guard(|| {
        let len = n.checked_mul(dim).ok_or_else(|| bad("n * dim overflows"))?;
        let values = slice_arg(data, len, "data")?.to_vec();
        let inner = ParticleCloud::from_flat(n, dim, values)?;
        out_ptr(out, Box::into_raw(Box::new(SsiCloud { inner })))
    })
}

/// # Safety
/// `cloud` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ssi_cloud_free(cloud: *mut SsiCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// # Safety
/// `cloud` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn ssi_cloud_len(cloud: *const SsiCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `cloud` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn ssi_cloud_dim(cloud: *const SsiCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.dim())
}

/// Copies the positions row-major into `buf`. Fails with `BufferTooSmall` when
/// `buf_len < len * dim`.
///
/// # Safety
/// `buf` must hold `buf_len` values.
#[no_mangle]
pub unsafe extern "C" fn ssi_cloud_copy(cloud: *const SsiCloud, buf: *mut f64, buf_len: usize) -> SsiStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        let src = c.inner.as_slice();
        if buf_len < src.len() {
            return Err(Fail(SsiStatus::BufferTooSmall, format!("need {} values, buffer holds {buf_len}", src.len())));
        }
        if src.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Squared MMD (unbiased, Gaussian kernel, median-heuristic bandwidth).
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_mmd(x: *const SsiCloud, y: *const SsiCloud, out: *mut f64) -> SsiStatus {
    guard(|| {
        let r = analysis::mmd(&cloud_ref(x)?.inner, &cloud_ref(y)?.inner)?;
        out_ptr(out, r.mmd2)
    })
}

/// Subsampled 2-Wasserstein distance averaged over `repeats` draws.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_w2(
    x: *const SsiCloud,
    y: *const SsiCloud,
    subsample: usize,
    repeats: usize,
    seed: u64,
    out: *mut f64,
) -> SsiStatus {
    guard(|| {
        let cfg = W2Config { subsample, repeats };
        let r = analysis::w2(&cloud_ref(x)?.inner, &cloud_ref(y)?.inner, &cfg, seed)?;
        out_ptr(out, r.w2)
    })
}

/// Mean negative log-density of the cloud, normalized when the target knows `log Z`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_nll(cloud: *const SsiCloud, target: *const SsiTarget, out: *mut f64) -> SsiStatus {
    guard(|| {
        let r = analysis::nll(&cloud_ref(cloud)?.inner, target_ref(target)?.inner.as_ref())?;
        out_ptr(out, r.nll)
    })
}

/// Number of target modes holding at least the occupancy threshold of particles.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ssi_modes_found(
    cloud: *const SsiCloud,
    target: *const SsiTarget,
    radius: f64,
    out: *mut usize,
) -> SsiStatus {
    guard(|| {
        let t = target_ref(target)?;
        let centers = t
            .inner
            .mode_centers()
            .ok_or_else(|| Fail(SsiStatus::Unsupported, format!("{} has no known modes", t.inner.name())))?;
        let r = analysis::mode_coverage(&cloud_ref(cloud)?.inner, &centers, radius)?;
        out_ptr(out, r.modes_found)
    })
}

/// Critical time `T*` for a density `N(0, sigma2 I) * nu` with `nu` supported in a ball of radius `r`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ssi_critical_time(r: f64, sigma2: f64, out: *mut f64) -> SsiStatus {
    guard(|| {
        let spec = ConvolutionSpec::new(r, sigma2)?;
        out_ptr(out, analysis::critical_time_t_star(&spec))
    })
}

/// Log-Sobolev constant bounds; requires `0 < sigma2 < 1`.
///
/// # Safety
/// `tight` and `crude` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ssi_lsi_bound(r: f64, sigma2: f64, tight: *mut f64, crude: *mut f64) -> SsiStatus {
    guard(|| {
        let b = analysis::lsi_bound(r, sigma2)?;
        out_ptr(tight, b.tight)?;
        out_ptr(crude, b.crude)
    })
}

/// Bifurcation time of the symmetric two-component mixture with means `+-m`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ssi_bifurcation_time(m: f64, out: *mut f64) -> SsiStatus {
    guard(|| out_ptr(out, analysis::gmm_bifurcation_time(m)?))
}
