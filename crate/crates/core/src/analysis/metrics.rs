use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assignment::min_cost_assignment;
use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::targets::TargetDensity;

/// Pooled points used for the median-heuristic bandwidth.
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(x: &ParticleCloud, y: &ParticleCloud) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: y.dim() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    /// Unbiased U-statistic estimate of `MMD^2`; may be slightly negative.
    pub mmd2: f64,
    /// `max(mmd2, 0)`.
    pub mmd2_clamped: f64,
    /// Gaussian kernel length scale `l` in `exp(-|x - y|^2 / (2 l^2))`.
    pub bandwidth: f64,
    pub n_x: usize,
    pub n_y: usize,
}

/// Median pairwise distance of the pooled clouds, computed on at most
/// [`BANDWIDTH_SUBSAMPLE`] evenly strided points.
pub fn median_heuristic(x: &ParticleCloud, y: &ParticleCloud) -> f64 {
    let total = x.len() + y.len();
    let take = total.min(BANDWIDTH_SUBSAMPLE);
    let pooled: Vec<&[f64]> = (0..take)
        .map(|k| {
            let i = k * total / take;
            if i < x.len() {
                x.particle(i)
            } else {
                y.particle(i - x.len())
            }
        })
        .collect();
    let mut dists: Vec<f64> = Vec::with_capacity(take * take.saturating_sub(1) / 2);
    for i in 0..take {
        for j in i + 1..take {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn kernel_sum(a: &ParticleCloud, b: &ParticleCloud, gamma: f64, skip_diagonal: bool) -> f64 {
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let xi = a.particle(i);
            let mut s = 0.0;
            for j in 0..b.len() {
                if skip_diagonal && i == j {
                    continue;
                }
                s += (-gamma * sq_dist(xi, b.particle(j))).exp();
            }
            s
        })
        .sum()
}

/// Unbiased `MMD^2` with a Gaussian kernel of the given length scale.
pub fn mmd_with_bandwidth(x: &ParticleCloud, y: &ParticleCloud, bandwidth: f64) -> Result<MmdResult> {
    check_dims(x, y)?;
    let need = 2;
    if x.len() < need || y.len() < need {
        return Err(Error::InsufficientSamples { needed: need, got: x.len().min(y.len()) });
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Domain("MMD bandwidth must be positive".into()));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let kxx = kernel_sum(x, x, gamma, true) / (n * (n - 1.0));
    let kyy = kernel_sum(y, y, gamma, true) / (m * (m - 1.0));
    let kxy = kernel_sum(x, y, gamma, false) / (n * m);
    let mmd2 = kxx + kyy - 2.0 * kxy;
    Ok(MmdResult { mmd2, mmd2_clamped: mmd2.max(0.0), bandwidth, n_x: x.len(), n_y: y.len() })
}

/// Unbiased `MMD^2` with the pooled median-heuristic bandwidth.
pub fn mmd(x: &ParticleCloud, y: &ParticleCloud) -> Result<MmdResult> {
    check_dims(x, y)?;
    mmd_with_bandwidth(x, y, median_heuristic(x, y))
}

/// Biased V-statistic `MMD^2`; nonnegative and exactly zero for identical clouds.
pub fn mmd_biased(x: &ParticleCloud, y: &ParticleCloud, bandwidth: f64) -> Result<f64> {
    check_dims(x, y)?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let v = kernel_sum(x, x, gamma, false) / (n * n) + kernel_sum(y, y, gamma, false) / (m * m)
        - 2.0 * kernel_sum(x, y, gamma, false) / (n * m);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct W2Config {
    pub subsample: usize,
    pub repeats: usize,
}

impl Default for W2Config {
    fn default() -> Self {
        Self { subsample: 1024, repeats: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    /// Mean over repeats.
    pub w2: f64,
    pub std_error: f64,
    pub subsample: usize,
    pub repeats: usize,
    pub values: Vec<f64>,
}

/// Exact W2 between two equal-size clouds.
pub fn w2_exact(x: &ParticleCloud, y: &ParticleCloud) -> Result<f64> {
    check_dims(x, y)?;
    if x.len() != y.len() {
        return Err(Error::InsufficientSamples { needed: x.len(), got: y.len() });
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let cost: Vec<f64> =
        (0..n).into_par_iter().flat_map_iter(|i| (0..n).map(move |j| sq_dist(x.particle(i), y.particle(j)))).collect();
    let (_, total) = min_cost_assignment(&cost, n);
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Empirical W2 on random equal-size subsamples, averaged over repeats.
///
/// The subsample size is `min(cfg.subsample, |x|, |y|)`; when both clouds are no
/// larger than that, a single exact evaluation is returned.
pub fn w2(x: &ParticleCloud, y: &ParticleCloud, cfg: &W2Config, seed: u64) -> Result<W2Result> {
    check_dims(x, y)?;
    if cfg.subsample == 0 || cfg.repeats == 0 {
        return Err(Error::invalid("W2 subsample and repeats must be positive"));
    }
    let s = cfg.subsample.min(x.len()).min(y.len());
    if s == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let exhaustive = x.len() == s && y.len() == s;
    let repeats = if exhaustive { 1 } else { cfg.repeats };
    let mut values = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = substream(seed, Purpose::Metric, r as u64, 0);
        let xi = if x.len() == s { (0..s).collect() } else { sample_indices(&mut rng, x.len(), s).into_vec() };
        let yi = if y.len() == s { (0..s).collect() } else { sample_indices(&mut rng, y.len(), s).into_vec() };
        values.push(w2_exact(&x.select(&xi), &y.select(&yi))?);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std_error = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok(W2Result { w2: mean, std_error, subsample: s, repeats, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllResult {
    pub nll: f64,
    /// False when the target has no known normalizer.
    pub normalized: bool,
    /// Particles where the density is zero or not finite.
    pub non_finite: usize,
}

/// `-(1/n) sum log p(x_i)`, normalized when the target knows its normalizer.
pub fn nll(x: &ParticleCloud, target: &dyn TargetDensity) -> Result<NllResult> {
    if x.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: x.dim() });
    }
    if x.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let log_z = target.log_normalizer();
    let mut sum = 0.0;
    let mut bad = 0;
    for row in x.rows() {
        let lp = target.log_density(row);
        if !lp.is_finite() {
            bad += 1;
        }
        sum += lp;
    }
    let mean = sum / x.len() as f64 - log_z.unwrap_or(0.0);
    let nll = if bad > 0 { f64::INFINITY } else { -mean };
    Ok(NllResult { nll, normalized: log_z.is_some(), non_finite: bad })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub modes_found: usize,
    /// Counts normalized over assigned particles.
    pub mode_weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub threshold: usize,
    pub unassigned: usize,
    pub radius: f64,
}

impl ModeCoverage {
    /// Largest over smallest weight among found modes.
    pub fn weight_ratio(&self) -> f64 {
        let found: Vec<f64> = self
            .counts
            .iter()
            .zip(&self.mode_weights)
            .filter(|(c, _)| **c >= self.threshold)
            .map(|(_, w)| *w)
            .collect();
        let max = found.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = found.iter().copied().fold(f64::INFINITY, f64::min);
        if found.is_empty() {
            f64::NAN
        } else {
            max / min
        }
    }
}

/// Assigns each particle to its nearest centre when within `radius`; a mode
/// counts as found with at least `max(5, 0.1 n / K)` particles.
pub fn mode_coverage(x: &ParticleCloud, centers: &[Vec<f64>], radius: f64) -> Result<ModeCoverage> {
    if !(radius > 0.0) {
        return Err(Error::Domain("mode radius must be positive".into()));
    }
    if centers.is_empty() {
        return Err(Error::invalid("mode coverage needs at least one centre"));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != x.dim()) {
        return Err(Error::DimensionMismatch { expected: x.dim(), got: c.len() });
    }
    let k = centers.len();
    let mut counts = vec![0usize; k];
    let mut unassigned = 0;
    let r2 = radius * radius;
    for row in x.rows() {
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(row, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("centres are non-empty");
        if d2 <= r2 {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let threshold = (0.1 * x.len() as f64 / k as f64).ceil().max(5.0) as usize;
    let assigned: usize = counts.iter().sum();
    let mode_weights = counts.iter().map(|&c| if assigned > 0 { c as f64 / assigned as f64 } else { 0.0 }).collect();
    Ok(ModeCoverage {
        modes_found: counts.iter().filter(|&&c| c >= threshold).count(),
        mode_weights,
        counts,
        threshold,
        unassigned,
        radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub nll: bool,
    pub mmd: bool,
    pub w2: bool,
    pub w2_settings: W2Config,
    pub modes: bool,
    /// Overrides the target's default mode radius.
    pub mode_radius: Option<f64>,
    /// Size of the exact-sampler reference cloud; defaults to the sample size.
    pub reference_size: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            nll: true,
            mmd: true,
            w2: true,
            w2_settings: W2Config::default(),
            modes: true,
            mode_radius: None,
            reference_size: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMeta {
    pub bandwidth: Option<f64>,
    pub w2_subsample: Option<usize>,
    pub w2_repeats: Option<usize>,
    pub reference_size: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll: Option<NllResult>,
    pub mmd: Option<MmdResult>,
    pub w2: Option<W2Result>,
    pub modes: Option<ModeCoverage>,
    pub estimator_meta: EstimatorMeta,
}

/// Evaluates the configured metrics. MMD and W2 need a reference cloud, mode
/// coverage needs mode centres and a radius; missing inputs skip the metric.
pub fn compute_metrics(
    x: &ParticleCloud,
    target: &dyn TargetDensity,
    reference: Option<&ParticleCloud>,
    mode_radius: Option<f64>,
    cfg: &MetricsConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let nll = if cfg.nll { Some(nll(x, target)?) } else { None };
    let mmd = match reference {
        Some(r) if cfg.mmd => Some(mmd(x, r)?),
        _ => None,
    };
    let w2 = match reference {
        Some(r) if cfg.w2 => Some(w2(x, r, &cfg.w2_settings, seed)?),
        _ => None,
    };
    let modes = match (target.mode_centers(), cfg.mode_radius.or(mode_radius)) {
        (Some(c), Some(radius)) if cfg.modes => Some(mode_coverage(x, &c, radius)?),
        _ => None,
    };
    Ok(MetricsReport {
        estimator_meta: EstimatorMeta {
            bandwidth: mmd.map(|m| m.bandwidth),
            w2_subsample: w2.as_ref().map(|w| w.subsample),
            w2_repeats: w2.as_ref().map(|w| w.repeats),
            reference_size: reference.map(|r| r.len()),
            seed,
        },
        nll,
        mmd,
        w2,
        modes,
    })
}
