use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::RngCore;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LogDensity, TargetDensity};
use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Components whose log-term falls this far below the leading one are skipped.
const PRUNE_NATS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    /// One isotropic variance shared by every component.
    Isotropic(f64),
    /// One isotropic variance per component.
    PerComponent(Vec<f64>),
    /// A full `d x d` covariance matrix per component.
    Full(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub covariance: Covariance,
    pub weights: Vec<f64>,
}

impl GaussianMixtureSpec {
    /// Equal-weight mixture with a shared isotropic variance.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64) -> Self {
        let k = means.len();
        Self { means, covariance: Covariance::Isotropic(variance), weights: vec![1.0 / k as f64; k] }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        if let Some(bad) = self.means.iter().find(|m| m.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        if self.weights.len() != k {
            return Err(Error::invalid(format!("{} weights for {} components", self.weights.len(), k)));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        match &self.covariance {
            Covariance::Isotropic(v) if !(v.is_finite() && *v > 0.0) => {
                Err(Error::invalid("isotropic variance must be positive"))
            }
            Covariance::PerComponent(vs) if vs.len() != k => Err(Error::invalid("one variance per component required")),
            Covariance::PerComponent(vs) if vs.iter().any(|v| !(v.is_finite() && *v > 0.0)) => {
                Err(Error::invalid("component variances must be positive"))
            }
            Covariance::Full(covs) if covs.len() != k => {
                Err(Error::invalid("one covariance matrix per component required"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Isotropic { inv_var: Vec<f64>, std: Vec<f64> },
    Full { precision: Vec<f64>, chol: Vec<f64> },
}

/// Finite Gaussian mixture with exact normalized log-density.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    name: String,
    dim: usize,
    means: Vec<f64>,
    /// Means stored coordinate-major (`[j * K + k]`).
    means_by_coord: Vec<f64>,
    weights: Vec<f64>,
    /// `log w_k - 0.5 log det(2 pi Sigma_k)`.
    log_coef: Vec<f64>,
    shape: Shape,
}

pub fn make_gmm(spec: &GaussianMixtureSpec) -> Result<GaussianMixture> {
    GaussianMixture::new("gmm", spec)
}

/// `N(0, variance * I_dim)` as a one-component mixture.
pub fn make_gaussian(dim: usize, variance: f64) -> Result<GaussianMixture> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    GaussianMixture::new("gaussian", &GaussianMixtureSpec::isotropic(vec![vec![0.0; dim]], variance))
}

/// `size x size` grid of equal-weight isotropic components centred at the origin.
pub fn make_mog_grid(size: usize, spacing: f64, variance: f64) -> Result<GaussianMixture> {
    if size == 0 || !(spacing > 0.0) {
        return Err(Error::invalid("grid needs a positive size and spacing"));
    }
    let offset = (size as f64 - 1.0) / 2.0;
    let means = (0..size)
        .flat_map(|i| (0..size).map(move |j| (i, j)))
        .map(|(i, j)| vec![(i as f64 - offset) * spacing, (j as f64 - offset) * spacing])
        .collect();
    GaussianMixture::new(format!("mog{size}x{size}"), &GaussianMixtureSpec::isotropic(means, variance))
}

/// Random 40-component mixture: means uniform on `[-40, 40]^2`, per-coordinate
/// standard deviation `softplus(1)`, equal weights.
pub fn make_mog40(seed: u64) -> Result<GaussianMixture> {
    const COMPONENTS: usize = 40;
    const LOC_SCALE: f64 = 40.0;
    let std = (1.0 + 1f64.exp()).ln();
    let mut rng = substream(seed, Purpose::Observations, 40, 0);
    let loc = Uniform::new_inclusive(-LOC_SCALE, LOC_SCALE).expect("valid range");
    let means = (0..COMPONENTS).map(|_| vec![loc.sample(&mut rng), loc.sample(&mut rng)]).collect();
    GaussianMixture::new("mog40", &GaussianMixtureSpec::isotropic(means, std * std))
}

impl GaussianMixture {
    pub fn new(name: impl Into<String>, spec: &GaussianMixtureSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.means.len();
        let d = spec.means[0].len();
        let log_w: Vec<f64> = spec.weights.iter().map(|w| w.ln()).collect();
        let (shape, log_coef) = match &spec.covariance {
            Covariance::Isotropic(v) => isotropic_shape(&vec![*v; k], &log_w, d),
            Covariance::PerComponent(vs) => isotropic_shape(vs, &log_w, d),
            Covariance::Full(covs) => {
                let mut precision = Vec::with_capacity(k * d * d);
                let mut chol = Vec::with_capacity(k * d * d);
                let mut log_coef = Vec::with_capacity(k);
                for (c, cov) in covs.iter().enumerate() {
                    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                        return Err(Error::invalid(format!("covariance {c} is not {d}x{d}")));
                    }
                    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
                    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                        return Err(Error::invalid(format!("covariance {c} is not symmetric")));
                    }
                    let ch = m
                        .cholesky()
                        .ok_or_else(|| Error::invalid(format!("covariance {c} is not positive definite")))?;
                    let l = ch.l();
                    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    let p = ch.inverse();
                    for i in 0..d {
                        for j in 0..d {
                            precision.push(p[(i, j)]);
                            chol.push(l[(i, j)]);
                        }
                    }
                    log_coef.push(log_w[c] - 0.5 * (d as f64 * LN_2PI + log_det));
                }
                (Shape::Full { precision, chol }, log_coef)
            }
        };
        Ok(Self {
            name: name.into(),
            dim: d,
            means: spec.means.iter().flatten().copied().collect(),
            means_by_coord: (0..d).flat_map(|j| spec.means.iter().map(move |m| m[j])).collect(),
            weights: spec.weights.clone(),
            log_coef,
            shape,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    /// Log of the k-th weighted component density at `x`.
    #[inline]
    fn log_term(&self, k: usize, x: &[f64]) -> f64 {
        let mu = self.mean(k);
        match &self.shape {
            Shape::Isotropic { inv_var, .. } => {
                let q: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                self.log_coef[k] - 0.5 * q * inv_var[k]
            }
            Shape::Full { precision, .. } => {
                let d = self.dim;
                let p = &precision[k * d * d..(k + 1) * d * d];
                let mut q = 0.0;
                for i in 0..d {
                    let di = x[i] - mu[i];
                    let mut row = 0.0;
                    for j in 0..d {
                        row += p[i * d + j] * (x[j] - mu[j]);
                    }
                    q += di * row;
                }
                self.log_coef[k] - 0.5 * q
            }
        }
    }

    /// Adds `weight * grad log N_k(x)` into `out`.
    #[inline]
    fn add_component_score(&self, k: usize, x: &[f64], weight: f64, out: &mut [f64]) {
        let mu = self.mean(k);
        match &self.shape {
            Shape::Isotropic { inv_var, .. } => {
                let c = weight * inv_var[k];
                for ((o, a), b) in out.iter_mut().zip(x).zip(mu) {
                    *o -= c * (a - b);
                }
            }
            Shape::Full { precision, .. } => {
                let d = self.dim;
                let p = &precision[k * d * d..(k + 1) * d * d];
                for i in 0..d {
                    let mut row = 0.0;
                    for j in 0..d {
                        row += p[i * d + j] * (x[j] - mu[j]);
                    }
                    out[i] -= weight * row;
                }
            }
        }
    }

    fn fill_log_terms(&self, x: &[f64], terms: &mut [f64]) {
        match &self.shape {
            Shape::Isotropic { inv_var, .. } => {
                let k = terms.len();
                terms.fill(0.0);
                for (j, xj) in x.iter().enumerate() {
                    let row = &self.means_by_coord[j * k..(j + 1) * k];
                    for (q, m) in terms.iter_mut().zip(row) {
                        *q += (xj - m) * (xj - m);
                    }
                }
                for ((t, lc), iv) in terms.iter_mut().zip(&self.log_coef).zip(inv_var) {
                    *t = lc - 0.5 * *t * iv;
                }
            }
            Shape::Full { .. } => {
                for (c, t) in terms.iter_mut().enumerate() {
                    *t = self.log_term(c, x);
                }
            }
        }
    }

    /// Max-shifted log-sum-exp over components; terms more than `PRUNE_NATS`
    /// below the largest are skipped.
    fn evaluate(&self, x: &[f64], mut score: Option<&mut [f64]>, want_log: bool) -> f64 {
        let k = self.num_components();
        let mut stack = [0.0f64; 64];
        let mut heap;
        let terms: &mut [f64] = if k <= stack.len() {
            &mut stack[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        self.fill_log_terms(x, terms);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if let Some(out) = score.as_deref_mut() {
            out.fill(0.0);
        }
        if !max.is_finite() {
            return max;
        }
        let mut total = 0.0;
        for (c, &t) in terms.iter().enumerate() {
            if t < max - PRUNE_NATS {
                continue;
            }
            let w = (t - max).exp();
            total += w;
            if let Some(out) = score.as_deref_mut() {
                self.add_component_score(c, x, w, out);
            }
        }
        if let Some(out) = score {
            let inv = 1.0 / total;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        if want_log {
            max + total.ln()
        } else {
            f64::NAN
        }
    }
}

fn isotropic_shape(vars: &[f64], log_w: &[f64], d: usize) -> (Shape, Vec<f64>) {
    let log_coef = vars.iter().zip(log_w).map(|(v, lw)| lw - 0.5 * d as f64 * (LN_2PI + v.ln())).collect();
    let shape = Shape::Isotropic {
        inv_var: vars.iter().map(|v| 1.0 / v).collect(),
        std: vars.iter().map(|v| v.sqrt()).collect(),
    };
    (shape, log_coef)
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None, true)
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.evaluate(x, Some(out), false);
    }

    fn log_density_and_score(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.evaluate(x, Some(out), true)
    }
}

impl TargetDensity for GaussianMixture {
    fn name(&self) -> &str {
        &self.name
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }

    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Option<ParticleCloud> {
        let d = self.dim;
        let pick = WeightedIndex::new(&self.weights).ok()?;
        let mut flat = Vec::with_capacity(n * d);
        let mut xi = vec![0.0; d];
        for _ in 0..n {
            let k = pick.sample(rng);
            xi.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let mu = self.mean(k);
            match &self.shape {
                Shape::Isotropic { std, .. } => {
                    flat.extend(mu.iter().zip(&xi).map(|(m, z)| m + std[k] * z));
                }
                Shape::Full { chol, .. } => {
                    let l = &chol[k * d * d..(k + 1) * d * d];
                    for i in 0..d {
                        let mut v = mu[i];
                        for j in 0..=i {
                            v += l[i * d + j] * xi[j];
                        }
                        flat.push(v);
                    }
                }
            }
        }
        ParticleCloud::from_flat(n, d, flat).ok()
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.means.chunks_exact(self.dim).map(<[f64]>::to_vec).collect())
    }
}
