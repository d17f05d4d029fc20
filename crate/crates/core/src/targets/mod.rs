//! Benchmark targets exposing an unnormalized log-density and its analytic score.

mod bayes;
mod gmm;
mod many_well;
mod rings;

use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::cloud::ParticleCloud;

pub use bayes::{make_bayes_gmm_posterior, BayesGmmPosterior, BayesPosteriorSpec};
pub use gmm::{make_gaussian, make_gmm, make_mog40, make_mog_grid, Covariance, GaussianMixture, GaussianMixtureSpec};
pub use many_well::{make_many_well, ManyWell, ManyWellSpec};
pub use rings::{make_rings, Rings, RingsSpec};

/// Norm above which a score is treated as an overflow.
pub const SCORE_OVERFLOW_GUARD: f64 = 1e8;

/// A differentiable unnormalized log-density on `R^d`.
///
/// Implementations must be pure: kernels call them concurrently from many threads.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Unnormalized log-density; `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes `grad log p(x)` into `out`. Outside the support `out` is zeroed.
    fn score_into(&self, x: &[f64], out: &mut [f64]);

    /// Both quantities at once. Override when they share work.
    fn log_density_and_score(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.score_into(x, out);
        self.log_density(x)
    }

    /// Cheap membership test for the declared support.
    fn in_support(&self, _x: &[f64]) -> bool {
        true
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, &mut out);
        out
    }
}

/// A benchmark target: a [`LogDensity`] plus the metadata the metrics need.
pub trait TargetDensity: LogDensity {
    fn name(&self) -> &str;

    /// `log Z` such that `log_density(x) - log Z` is the normalized log-density.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }

    /// Exact i.i.d. draws, when the target admits them.
    fn sample(&self, _rng: &mut dyn RngCore, _n: usize) -> Option<ParticleCloud> {
        None
    }

    /// Known mode locations, used for mode-coverage metrics.
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

impl<T: LogDensity + ?Sized> LogDensity for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).score_into(x, out)
    }
    fn log_density_and_score(&self, x: &[f64], out: &mut [f64]) -> f64 {
        (**self).log_density_and_score(x, out)
    }
    fn in_support(&self, x: &[f64]) -> bool {
        (**self).in_support(x)
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn log_normalizer(&self) -> Option<f64> {
        (**self).log_normalizer()
    }
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Option<ParticleCloud> {
        (**self).sample(rng, n)
    }
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        (**self).mode_centers()
    }
}

type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ScoreFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A target assembled from user callbacks.
pub struct FnTarget {
    name: String,
    dim: usize,
    log_density: Box<LogDensityFn>,
    score: Box<ScoreFn>,
    log_normalizer: Option<f64>,
}

impl FnTarget {
    pub fn new<L, S>(name: impl Into<String>, dim: usize, log_density: L, score: S) -> Self
    where
        L: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            log_density: Box::new(log_density),
            score: Box::new(score),
            log_normalizer: None,
        }
    }

    pub fn with_log_normalizer(mut self, log_z: f64) -> Self {
        self.log_normalizer = Some(log_z);
        self
    }
}

impl fmt::Debug for FnTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnTarget").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl LogDensity for FnTarget {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        if self.log_density(x) == f64::NEG_INFINITY {
            out.fill(0.0);
        } else {
            (self.score)(x, out)
        }
    }
    fn in_support(&self, x: &[f64]) -> bool {
        (self.log_density)(x) > f64::NEG_INFINITY
    }
}

impl TargetDensity for FnTarget {
    fn name(&self) -> &str {
        &self.name
    }
    fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }
}

/// Max-shifted log-sum-exp of a slice. Returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Central finite-difference gradient with step `1e-4 * (1 + |x_i|)`.
pub fn finite_difference_score<D: LogDensity + ?Sized>(density: &D, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-4 * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let up = density.log_density(&probe);
            probe[i] = x[i] - h;
            let down = density.log_density(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
