use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target written as `Y + sigma Z` with `|Y| <= R` and `Z ~ N(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionSpec {
    pub r: f64,
    pub sigma2: f64,
}

impl ConvolutionSpec {
    pub fn new(r: f64, sigma2: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite() && sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain(format!("need R >= 0 and sigma2 > 0, got R = {r}, sigma2 = {sigma2}")));
        }
        Ok(Self { r, sigma2 })
    }
}

/// Strong log-concavity modulus of the denoising density:
/// `t^2 / (1 - t)^2 + 1 / sigma^2 - R^2 / sigma^4`.
pub fn beta_t(spec: &ConvolutionSpec, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::TimeOutOfRange { t, range: "(0, 1)" });
    }
    let s2 = spec.sigma2;
    Ok(t * t / ((1.0 - t) * (1.0 - t)) + 1.0 / s2 - spec.r * spec.r / (s2 * s2))
}

/// Time after which `beta_t > 0`.
pub fn critical_time_t_star(spec: &ConvolutionSpec) -> f64 {
    let (r2, s2) = (spec.r * spec.r, spec.sigma2);
    if r2 <= s2 {
        return 0.0;
    }
    if r2 == s2 + s2 * s2 {
        return 0.5;
    }
    let q = (r2 - s2).sqrt();
    let t = q / (q + s2);
    debug_assert!(if r2 < s2 + s2 * s2 { t <= 0.5 } else { t >= 0.5 });
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsiBound {
    /// `6 (4 R^2 + sigma^2) exp(4 R^2 / sigma^2)`
    pub tight: f64,
    /// `6 exp(8 R^2 / sigma^2)`
    pub crude: f64,
}

/// Log-Sobolev constant bounds for a convolution target with `sigma^2 < 1`.
pub fn lsi_bound(r: f64, sigma2: f64) -> Result<LsiBound> {
    if !(sigma2 > 0.0 && sigma2 < 1.0) {
        return Err(Error::Domain(format!("LSI bound needs 0 < sigma2 < 1, got {sigma2}")));
    }
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("LSI bound needs R >= 0, got {r}")));
    }
    let r2 = r * r;
    Ok(LsiBound {
        tight: 6.0 * (4.0 * r2 + sigma2) * (4.0 * r2 / sigma2).exp(),
        crude: 6.0 * (8.0 * r2 / sigma2).exp(),
    })
}

/// Bounds for `p_{X_T0}`, a convolution with radius `T0 R` and noise level
/// `1 - T0 (1 - sigma)`.
pub fn initialization_lsi_bound(r: f64, sigma: f64, t0: f64) -> Result<LsiBound> {
    if !(t0 > 0.0 && t0 < 1.0) {
        return Err(Error::TimeOutOfRange { t: t0, range: "(0, 1)" });
    }
    let s = 1.0 - t0 * (1.0 - sigma);
    lsi_bound(t0 * r, s * s)
}

/// Time at which the interpolant towards `0.5 N(-m, 1) + 0.5 N(m, 1)` turns
/// bimodal: `(sqrt(m^2 - 1) - 1) / (m^2 - 2)`, evaluated as `1 / (1 + sqrt(m^2 - 1))`.
pub fn gmm_bifurcation_time(m: f64) -> Result<f64> {
    if !(m > std::f64::consts::SQRT_2) || !m.is_finite() {
        return Err(Error::Domain(format!("bifurcation time needs m > sqrt(2), got {m}")));
    }
    Ok(1.0 / (1.0 + (m * m - 1.0).sqrt()))
}

/// Root of `f` on `[a, b]` by bisection; `f(a)` and `f(b)` must differ in sign.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Domain(format!("no sign change on [{a}, {b}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= tol {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
