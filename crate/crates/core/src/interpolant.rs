//! Linear-interpolant machinery: schedules, the denoising posterior, its
//! importance-sampling warm start, and the Monte Carlo Langevin velocity
//! estimator in direct and rescaled form.
//!
//! With `X_t = beta_t X_1 + alpha_t X_0` and `X_0 ~ N(0, I)`:
//! - denoising score: `beta (x_t - beta x_1) / alpha^2 + grad log p(x_1)`
//! - direct velocity: `u = beta_dot m + alpha_dot (x_t - beta m) / alpha`, `m = E[X_1 | X_t = x_t]`
//! - rescaled velocity: `u = (beta_dot / beta) x_t + alpha (alpha beta_dot - alpha_dot beta) / beta^2 E[grad log p(X_1) | X_t = x_t]`

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::ParticleCloud;
use crate::dynamics::{Chain, LangevinConfig};
use crate::error::{Error, Result};
use crate::targets::{GaussianMixtureSpec, LogDensity, TargetDensity};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Time schedule `(alpha_t, beta_t)` with derivatives.
#[derive(Clone)]
pub struct InterpolantSchedule {
    name: &'static str,
    alpha: ScalarFn,
    beta: ScalarFn,
    alpha_dot: ScalarFn,
    beta_dot: ScalarFn,
}

impl InterpolantSchedule {
    /// `alpha_t = 1 - t`, `beta_t = t`.
    pub fn linear() -> Self {
        Self {
            name: "linear",
            alpha: Arc::new(|t| 1.0 - t),
            beta: Arc::new(|t| t),
            alpha_dot: Arc::new(|_| -1.0),
            beta_dot: Arc::new(|_| 1.0),
        }
    }

    pub fn custom(
        name: &'static str,
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta_dot: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name,
            alpha: Arc::new(alpha),
            beta: Arc::new(beta),
            alpha_dot: Arc::new(alpha_dot),
            beta_dot: Arc::new(beta_dot),
        }
    }

    pub fn name(&self) -> &str {
        self.name
    }
    pub fn alpha(&self, t: f64) -> f64 {
        (self.alpha)(t)
    }
    pub fn beta(&self, t: f64) -> f64 {
        (self.beta)(t)
    }
    pub fn alpha_dot(&self, t: f64) -> f64 {
        (self.alpha_dot)(t)
    }
    pub fn beta_dot(&self, t: f64) -> f64 {
        (self.beta_dot)(t)
    }

    /// Velocity from the posterior mean `m = E[X_1 | X_t = x]`.
    pub fn velocity_from_mean(&self, t: f64, x: &[f64], mean: &[f64]) -> Vec<f64> {
        let (a, b, ad, bd) = (self.alpha(t), self.beta(t), self.alpha_dot(t), self.beta_dot(t));
        x.iter().zip(mean).map(|(x, m)| bd * m + ad * (x - b * m) / a).collect()
    }

    /// Velocity from the posterior mean of the target score.
    pub fn velocity_from_mean_score(&self, t: f64, x: &[f64], mean_score: &[f64]) -> Vec<f64> {
        let (a, b, ad, bd) = (self.alpha(t), self.beta(t), self.alpha_dot(t), self.beta_dot(t));
        let c = a * (a * bd - ad * b) / (b * b);
        x.iter().zip(mean_score).map(|(x, s)| bd / b * x + c * s).collect()
    }

    /// Score of `p_{X_t}` recovered from a velocity value.
    pub fn score_from_velocity(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let (a, b, ad, bd) = (self.alpha(t), self.beta(t), self.alpha_dot(t), self.beta_dot(t));
        x.iter()
            .zip(u)
            .map(|(x, u)| {
                let m = (u - ad * x / a) / (bd - ad * b / a);
                (b * m - x) / (a * a)
            })
            .collect()
    }
}

impl Default for InterpolantSchedule {
    fn default() -> Self {
        Self::linear()
    }
}

impl fmt::Debug for InterpolantSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InterpolantSchedule").field("name", &self.name).finish()
    }
}

/// Score of `p_{X_t}` from a velocity under the linear schedule:
/// `(t / (1 - t)) u - x / (1 - t)`.
pub fn linear_score_from_velocity(t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
    x.iter().zip(u).map(|(x, u)| t / (1.0 - t) * u - x / (1.0 - t)).collect()
}

/// The posterior of `X_1` given `X_t = x_t`.
pub struct DenoisingProblem<'a> {
    t: f64,
    x_t: Vec<f64>,
    target: &'a dyn TargetDensity,
    schedule: InterpolantSchedule,
    alpha: f64,
    beta: f64,
    /// `beta / alpha^2`
    coupling: f64,
}

impl<'a> DenoisingProblem<'a> {
    pub fn new(t: f64, x_t: &[f64], target: &'a dyn TargetDensity) -> Result<Self> {
        Self::with_schedule(t, x_t, target, InterpolantSchedule::linear())
    }

    pub fn with_schedule(
        t: f64,
        x_t: &[f64],
        target: &'a dyn TargetDensity,
        schedule: InterpolantSchedule,
    ) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::TimeOutOfRange { t, range: "(0, 1)" });
        }
        if x_t.len() != target.dim() {
            return Err(Error::DimensionMismatch { expected: target.dim(), got: x_t.len() });
        }
        let alpha = schedule.alpha(t);
        let beta = schedule.beta(t);
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::TimeOutOfRange { t, range: "alpha_t > 0 and beta_t > 0" });
        }
        Ok(Self { t, x_t: x_t.to_vec(), target, schedule, alpha, beta, coupling: beta / (alpha * alpha) })
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn x_t(&self) -> &[f64] {
        &self.x_t
    }
    pub fn target(&self) -> &dyn TargetDensity {
        self.target
    }
    pub fn schedule(&self) -> &InterpolantSchedule {
        &self.schedule
    }

    /// Curvature `beta^2 / alpha^2` of the Gaussian likelihood term.
    pub fn likelihood_curvature(&self) -> f64 {
        self.beta * self.coupling
    }

    /// Mean and standard deviation of the Gaussian proposal `N(x_t / beta, (alpha / beta)^2 I)`.
    pub fn proposal(&self) -> (Vec<f64>, f64) {
        (self.x_t.iter().map(|x| x / self.beta).collect(), self.alpha / self.beta)
    }
}

impl LogDensity for DenoisingProblem<'_> {
    fn dim(&self) -> usize {
        self.x_t.len()
    }

    fn log_density(&self, x1: &[f64]) -> f64 {
        let q: f64 = self.x_t.iter().zip(x1).map(|(xt, x)| (xt - self.beta * x) * (xt - self.beta * x)).sum();
        -0.5 * q / (self.alpha * self.alpha) + self.target.log_density(x1)
    }

    fn score_into(&self, x1: &[f64], out: &mut [f64]) {
        self.target.score_into(x1, out);
        if !self.target.in_support(x1) {
            return;
        }
        for ((o, xt), x) in out.iter_mut().zip(&self.x_t).zip(x1) {
            *o += self.coupling * (xt - self.beta * x);
        }
    }

    fn log_density_and_score(&self, x1: &[f64], out: &mut [f64]) -> f64 {
        let lp = self.target.log_density_and_score(x1, out);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let mut q = 0.0;
        for ((o, xt), x) in out.iter_mut().zip(&self.x_t).zip(x1) {
            let r = xt - self.beta * x;
            q += r * r;
            *o += self.coupling * r;
        }
        lp - 0.5 * q / (self.alpha * self.alpha)
    }

    fn in_support(&self, x1: &[f64]) -> bool {
        self.target.in_support(x1)
    }
}

/// Score of the denoising posterior at `x1`.
pub fn denoising_score(prob: &DenoisingProblem<'_>, x1: &[f64]) -> Result<Vec<f64>> {
    if x1.len() != prob.dim() {
        return Err(Error::DimensionMismatch { expected: prob.dim(), got: x1.len() });
    }
    Ok(prob.score(x1))
}

#[derive(Debug, Clone)]
pub struct ImportanceSample {
    pub cloud: ParticleCloud,
    /// `1 / sum(w_bar^2)` over the proposal weights.
    pub effective_sample_size: f64,
    pub num_proposals: usize,
}

/// Draws `n` proposals from `N(x_t / beta, (alpha / beta)^2 I)`, weights them by
/// the target density and multinomially resamples `n` particles.
pub fn importance_sampling_init<R: Rng + ?Sized>(
    prob: &DenoisingProblem<'_>,
    n: usize,
    rng: &mut R,
) -> Result<ImportanceSample> {
    importance_resample(prob, n, n, rng)
}

/// Importance sampling with `proposals` draws resampled down (or up) to `keep` particles.
pub fn importance_resample<R: Rng + ?Sized>(
    prob: &DenoisingProblem<'_>,
    proposals: usize,
    keep: usize,
    rng: &mut R,
) -> Result<ImportanceSample> {
    if proposals == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let d = prob.dim();
    let (mean, sd) = prob.proposal();
    let mut z = Vec::with_capacity(proposals * d);
    let mut log_w = Vec::with_capacity(proposals);
    for _ in 0..proposals {
        let start = z.len();
        for m in &mean {
            let xi: f64 = StandardNormal.sample(rng);
            z.push(m + sd * xi);
        }
        log_w.push(prob.target().log_density(&z[start..]));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::ProposalMissesSupport);
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let ess = total * total / w.iter().map(|v| v * v).sum::<f64>();
    let pick = WeightedIndex::new(&w).map_err(|_| Error::ProposalMissesSupport)?;
    let mut flat = Vec::with_capacity(keep * d);
    for _ in 0..keep {
        let i = pick.sample(rng);
        flat.extend_from_slice(&z[i * d..(i + 1) * d]);
    }
    Ok(ImportanceSample {
        cloud: ParticleCloud::from_flat(keep, d, flat)?,
        effective_sample_size: ess,
        num_proposals: proposals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityForm {
    Direct,
    Rescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    ImportanceSampling,
    CarryOver,
}

/// Settings of the inner Monte Carlo Langevin estimator.
///
/// The estimator averages over `chains * retained` samples: `chains`
/// independent inner chains, each contributing its last `retained` iterates.
/// `chains = n, retained = 1` is the plain final-iterate estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VelocityEstimatorConfig {
    pub inner: LangevinConfig,
    pub chains: usize,
    pub retained: usize,
    /// Importance-sampling proposals per estimate; defaults to `chains * retained`.
    pub proposals: Option<usize>,
    pub form: VelocityForm,
    pub warm_start: WarmStart,
    /// Caps the inner step so the chain stays stable as `t -> 1`: unpreconditioned
    /// steps at `1 / kappa_t`, preconditioned steps at `1 / sqrt(kappa_t)`, with
    /// `kappa_t = beta_t^2 / alpha_t^2`.
    pub stabilize_step: bool,
    /// Smallest `alpha_t` accepted by the direct form.
    pub min_alpha: f64,
}

impl Default for VelocityEstimatorConfig {
    fn default() -> Self {
        Self {
            inner: LangevinConfig::default(),
            chains: 800,
            retained: 1,
            proposals: None,
            form: VelocityForm::Direct,
            warm_start: WarmStart::ImportanceSampling,
            stabilize_step: true,
            min_alpha: 1e-3,
        }
    }
}

impl VelocityEstimatorConfig {
    pub fn n_particles(&self) -> usize {
        self.chains * self.retained
    }

    pub fn num_proposals(&self) -> usize {
        self.proposals.unwrap_or_else(|| self.n_particles())
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.chains == 0 || self.retained == 0 {
            return Err(Error::invalid("velocity estimator needs chains >= 1 and retained >= 1"));
        }
        if self.retained > self.inner.num_steps {
            return Err(Error::invalid("cannot retain more iterates than inner steps"));
        }
        if self.proposals == Some(0) {
            return Err(Error::invalid("importance sampling needs at least one proposal"));
        }
        if !(self.min_alpha > 0.0) {
            return Err(Error::invalid("min_alpha must be positive"));
        }
        Ok(())
    }

    /// Inner step size actually used at this problem.
    pub fn effective_step(&self, prob: &DenoisingProblem<'_>) -> f64 {
        let eta = self.inner.step_size;
        if !self.stabilize_step {
            return eta;
        }
        let kappa = prob.likelihood_curvature();
        let cap = if self.inner.precondition { 1.0 / kappa.sqrt() } else { 1.0 / kappa };
        eta.min(cap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityDiagnostics {
    pub effective_sample_size: f64,
    /// Norm of the displacement of the inner-cloud mean over the Langevin run.
    pub drift_norm: f64,
    /// Per-coordinate standard error of the estimate, treating retained samples as independent.
    pub standard_error: Vec<f64>,
    pub clamped: u64,
    pub inner_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEstimate {
    pub velocity: Vec<f64>,
    pub diagnostics: VelocityDiagnostics,
}

/// Inner chain positions carried between consecutive estimates.
#[derive(Debug, Clone, Default)]
pub struct InnerCloud {
    positions: Option<Vec<f64>>,
}

/// Monte Carlo Langevin estimate of the velocity field at `(t, x_t)`.
pub fn estimate_velocity<R: Rng + ?Sized>(
    prob: &DenoisingProblem<'_>,
    cfg: &VelocityEstimatorConfig,
    rng: &mut R,
) -> Result<VelocityEstimate> {
    estimate_velocity_warm(prob, cfg, rng, &mut InnerCloud::default())
}

/// As [`estimate_velocity`], reusing `carry` as the initialization when
/// `cfg.warm_start` is `CarryOver`; `carry` is refreshed with the final inner cloud.
pub fn estimate_velocity_warm<R: Rng + ?Sized>(
    prob: &DenoisingProblem<'_>,
    cfg: &VelocityEstimatorConfig,
    rng: &mut R,
    carry: &mut InnerCloud,
) -> Result<VelocityEstimate> {
    cfg.validate()?;
    let t = prob.t();
    let alpha = prob.schedule().alpha(t);
    if cfg.form == VelocityForm::Direct && alpha < cfg.min_alpha {
        return Err(Error::TimeOutOfRange { t, range: "alpha_t >= min_alpha for the direct form" });
    }
    let d = prob.dim();
    let c = cfg.chains;

    let reuse = cfg.warm_start == WarmStart::CarryOver && carry.positions.as_ref().is_some_and(|p| p.len() == c * d);
    let (init, ess) = if reuse {
        (carry.positions.take().expect("checked above"), f64::NAN)
    } else {
        let is = importance_resample(prob, cfg.num_proposals(), c, rng)?;
        (is.cloud.as_slice().to_vec(), is.effective_sample_size)
    };

    let mut chains: Vec<Chain> = init.chunks_exact(d).map(|z| Chain::new(z.to_vec())).collect();
    let start_mean = column_mean(&init, d);
    let eta = cfg.effective_step(prob);
    let inner = LangevinConfig { step_size: eta, ..cfg.inner };
    let steps = cfg.inner.num_steps;
    let first_retained = steps - cfg.retained;

    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for k in 0..steps {
        for chain in chains.iter_mut() {
            chain.pula(prob, &inner, rng)?;
        }
        if k >= first_retained {
            for chain in &chains {
                let sample: &[f64] = match cfg.form {
                    VelocityForm::Direct => &chain.x,
                    VelocityForm::Rescaled => {
                        prob.target().score_into(&chain.x, &mut buf);
                        &buf
                    }
                };
                for j in 0..d {
                    sum[j] += sample[j];
                    sum_sq[j] += sample[j] * sample[j];
                }
            }
        }
    }

    let count = (c * cfg.retained) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let sd_of_mean: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / count - m * m).max(0.0) * count / (count - 1.0).max(1.0) / count).sqrt())
        .collect();

    let schedule = prob.schedule();
    let (velocity, scale) = match cfg.form {
        VelocityForm::Direct => {
            let (a, b, ad, bd) = (alpha, schedule.beta(t), schedule.alpha_dot(t), schedule.beta_dot(t));
            (schedule.velocity_from_mean(t, prob.x_t(), &mean), (bd - ad * b / a).abs())
        }
        VelocityForm::Rescaled => {
            let (a, b, ad, bd) = (alpha, schedule.beta(t), schedule.alpha_dot(t), schedule.beta_dot(t));
            (schedule.velocity_from_mean_score(t, prob.x_t(), &mean), (a * (a * bd - ad * b) / (b * b)).abs())
        }
    };

    let mut final_positions = Vec::with_capacity(c * d);
    let mut clamped = 0;
    for chain in &chains {
        final_positions.extend_from_slice(&chain.x);
        clamped += chain.stats.clamped;
    }
    let end_mean = column_mean(&final_positions, d);
    let drift_norm = start_mean.iter().zip(&end_mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if cfg.warm_start == WarmStart::CarryOver {
        carry.positions = Some(final_positions);
    }

    Ok(VelocityEstimate {
        velocity,
        diagnostics: VelocityDiagnostics {
            effective_sample_size: ess,
            drift_norm,
            standard_error: sd_of_mean.iter().map(|s| s * scale).collect(),
            clamped,
            inner_step: eta,
        },
    })
}

fn column_mean(flat: &[f64], d: usize) -> Vec<f64> {
    let n = (flat.len() / d.max(1)) as f64;
    let mut mean = vec![0.0; d];
    for row in flat.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Score estimate of `p_{X_t}` at `x_t` built from the velocity estimate.
pub fn estimate_score_at<R: Rng + ?Sized>(
    prob: &DenoisingProblem<'_>,
    cfg: &VelocityEstimatorConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let u = estimate_velocity(prob, cfg, rng)?;
    Ok(prob.schedule().score_from_velocity(prob.t(), prob.x_t(), &u.velocity))
}

/// Marginal density at time `t` of the interpolant towards the symmetric
/// two-component mixture `0.5 N(-m, 1) + 0.5 N(m, 1)`:
/// `0.5 N(x; m t, s^2) + 0.5 N(x; -m t, s^2)` with `s^2 = t^2 + (1 - t)^2`.
pub fn symmetric_pair_interpolant_density(m: f64, t: f64, x: f64) -> f64 {
    let var = t * t + (1.0 - t) * (1.0 - t);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let g = |y: f64| norm * (-(y * y) / (2.0 * var)).exp();
    0.5 * g(x - m * t) + 0.5 * g(x + m * t)
}

/// [`symmetric_pair_interpolant_density`] for a mixture given by its spec,
/// which must have means `±m`, unit variance and equal weights.
pub fn gmm_interpolant_density(spec: &GaussianMixtureSpec, t: f64, x: f64) -> Result<f64> {
    use crate::targets::Covariance;
    spec.validate()?;
    let ok_shape = spec.means.len() == 2
        && spec.means.iter().all(|m| m.len() == 1)
        && (spec.means[0][0] + spec.means[1][0]).abs() < 1e-12
        && matches!(spec.covariance, Covariance::Isotropic(v) if (v - 1.0).abs() < 1e-12)
        && (spec.weights[0] - 0.5).abs() < 1e-12;
    if !ok_shape {
        return Err(Error::invalid(
            "interpolant density needs a 1D pair with means ±m, unit variance and equal weights",
        ));
    }
    Ok(symmetric_pair_interpolant_density(spec.means[0][0].abs(), t, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use crate::targets::{make_gaussian, make_gmm, FnTarget};

    #[test]
    fn linear_schedule_endpoints() {
        let s = InterpolantSchedule::linear();
        assert_eq!((s.alpha(0.0), s.alpha(1.0), s.beta(0.0), s.beta(1.0)), (1.0, 0.0, 0.0, 1.0));
        assert!(s.beta(1e-9) > 0.0);
    }

    #[test]
    fn denoising_score_vanishes_at_rescaled_point() {
        let flat = FnTarget::new("flat", 2, |_| 0.0, |_, out| out.fill(0.0));
        let x_t = [0.6, -1.2];
        let t = 0.3;
        let prob = DenoisingProblem::new(t, &x_t, &flat).unwrap();
        let s = denoising_score(&prob, &[x_t[0] / t, x_t[1] / t]).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gaussian_denoising_score_zero_at_posterior_mean() {
        let g = make_gaussian(1, 1.0).unwrap();
        let (t, x_t) = (0.4, 1.3);
        let prob = DenoisingProblem::new(t, &[x_t], &g).unwrap();
        let post_mean = t * x_t / (t * t + (1.0 - t) * (1.0 - t));
        assert!(denoising_score(&prob, &[post_mean]).unwrap()[0].abs() < 1e-12);
        // closed form t x_t / (1-t)^2 - (t^2/(1-t)^2 + 1) x1
        let x1 = 0.7;
        let closed = t * x_t / (1.0 - t).powi(2) - (t * t / (1.0 - t).powi(2) + 1.0) * x1;
        assert!((denoising_score(&prob, &[x1]).unwrap()[0] - closed).abs() < 1e-12);
    }

    #[test]
    fn invalid_times_are_rejected() {
        let g = make_gaussian(1, 1.0).unwrap();
        assert!(DenoisingProblem::new(1.0, &[0.0], &g).is_err());
        assert!(DenoisingProblem::new(0.0, &[0.0], &g).is_err());
        assert!(DenoisingProblem::new(0.5, &[0.0, 1.0], &g).is_err());
    }

    #[test]
    fn importance_weights_uniform_when_target_flat() {
        let flat = FnTarget::new("flat", 1, |_| 0.0, |_, out| out.fill(0.0));
        let prob = DenoisingProblem::new(0.5, &[0.2], &flat).unwrap();
        let is = importance_sampling_init(&prob, 100, &mut substream(1, Purpose::Test, 0, 0)).unwrap();
        assert!((is.effective_sample_size - 100.0).abs() < 1e-9);
        assert_eq!(is.cloud.len(), 100);
    }

    #[test]
    fn importance_sampling_misses_support() {
        let nowhere = FnTarget::new("empty", 1, |_| f64::NEG_INFINITY, |_, out| out.fill(0.0));
        let prob = DenoisingProblem::new(0.5, &[0.0], &nowhere).unwrap();
        assert!(matches!(
            importance_sampling_init(&prob, 10, &mut substream(0, Purpose::Test, 0, 0)),
            Err(Error::ProposalMissesSupport)
        ));
    }

    #[test]
    fn direct_form_guard_near_one() {
        let g = make_gaussian(1, 1.0).unwrap();
        let prob = DenoisingProblem::new(0.9995, &[0.0], &g).unwrap();
        let cfg = VelocityEstimatorConfig {
            chains: 4,
            inner: LangevinConfig { num_steps: 2, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(
            estimate_velocity(&prob, &cfg, &mut substream(0, Purpose::Test, 0, 0)),
            Err(Error::TimeOutOfRange { .. })
        ));
        let rescaled = VelocityEstimatorConfig { form: VelocityForm::Rescaled, ..cfg };
        assert!(estimate_velocity(&prob, &rescaled, &mut substream(0, Purpose::Test, 0, 0)).is_ok());
    }

    #[test]
    fn score_identity_with_velocity() {
        let s = InterpolantSchedule::linear();
        let x = [0.3, -2.0];
        let u = [1.7, 0.4];
        for t in [0.1, 0.5, 0.93] {
            let general = s.score_from_velocity(t, &x, &u);
            let linear = linear_score_from_velocity(t, &x, &u);
            for (a, b) in general.iter().zip(&linear) {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn rescaled_and_direct_agree_with_exact_posterior_quantities() {
        // for N(0,1): m = t x / s2, E[score] = -m
        let s = InterpolantSchedule::linear();
        let (t, x) = (0.7, [1.1]);
        let s2 = t * t + (1.0 - t) * (1.0 - t);
        let m = [t * x[0] / s2];
        let a = s.velocity_from_mean(t, &x, &m)[0];
        let b = s.velocity_from_mean_score(t, &x, &[-m[0]])[0];
        assert!((a - b).abs() < 1e-12);
        assert!((a - (2.0 * t - 1.0) / s2 * x[0]).abs() < 1e-12);
    }

    #[test]
    fn interpolant_density_at_t0_is_standard_normal() {
        let spec = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![2.0]], 1.0);
        for x in [-1.5, 0.0, 0.7] {
            let p = gmm_interpolant_density(&spec, 0.0, x).unwrap();
            let phi = (-(x * x) / 2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((p - phi).abs() < 1e-15);
        }
        let bad = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![1.0]], 1.0);
        assert!(gmm_interpolant_density(&bad, 0.5, 0.0).is_err());
        assert!(make_gmm(&spec).is_ok());
    }
}
