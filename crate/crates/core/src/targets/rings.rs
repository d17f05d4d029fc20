//! Concentric rings in the plane.
//!
//! `p(x) ∝ Σ_k w_k exp(-(|x| - r_k)^2 / (2 s^2))` with `r_k = k * spacing`.
//! Ring `k` has unnormalized mass `2π w_k m_k`, where
//! `m_k = s^2 exp(-r_k^2 / 2s^2) + r_k s sqrt(2π) Φ(r_k / s)`.
//! The weights are `w_k ∝ 1 / m_k`, so every ring carries the same mass; for
//! thin rings this is the `w_k ∝ 1 / r_k` rule.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{log_sum_exp, LogDensity, TargetDensity};
use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingsSpec {
    pub dim: usize,
    pub num_rings: usize,
    pub radial_std: f64,
    pub spacing: f64,
}

impl Default for RingsSpec {
    fn default() -> Self {
        Self { dim: 2, num_rings: 8, radial_std: 0.15, spacing: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Rings {
    radii: Vec<f64>,
    log_weights: Vec<f64>,
    radial_std: f64,
    log_z: f64,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `∫_0^∞ r exp(-(r - c)^2 / (2 s^2)) dr`.
fn radial_mass(c: f64, s: f64) -> f64 {
    s * s * (-(c * c) / (2.0 * s * s)).exp() + c * s * (2.0 * std::f64::consts::PI).sqrt() * std_normal_cdf(c / s)
}

pub fn make_rings(spec: &RingsSpec) -> Result<Rings> {
    if spec.dim != 2 {
        return Err(Error::invalid(format!("rings are defined in 2 dimensions, not {}", spec.dim)));
    }
    if spec.num_rings == 0 {
        return Err(Error::invalid("need at least one ring"));
    }
    if !(spec.radial_std > 0.0 && spec.spacing > 0.0) {
        return Err(Error::invalid("radial_std and spacing must be positive"));
    }
    let s = spec.radial_std;
    let radii: Vec<f64> = (1..=spec.num_rings).map(|k| k as f64 * spec.spacing).collect();
    let raw: Vec<f64> = radii.iter().map(|&r| -radial_mass(r, s).ln()).collect();
    let norm = log_sum_exp(&raw);
    let log_weights: Vec<f64> = raw.iter().map(|w| w - norm).collect();
    // Z = 2π Σ w_k m_k = 2π K / Σ_j (1/m_j)
    let log_z = (2.0 * std::f64::consts::PI * spec.num_rings as f64).ln() - norm;
    Ok(Rings { radii, log_weights, radial_std: s, log_z })
}

impl Rings {
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn radial_std(&self) -> f64 {
        self.radial_std
    }

    fn evaluate(&self, x: &[f64], score: Option<&mut [f64]>) -> f64 {
        let r = x[0].hypot(x[1]);
        let inv_2s2 = 0.5 / (self.radial_std * self.radial_std);
        let mut max = f64::NEG_INFINITY;
        for (c, lw) in self.radii.iter().zip(&self.log_weights) {
            max = max.max(lw - (r - c) * (r - c) * inv_2s2);
        }
        let mut total = 0.0;
        let mut dr = 0.0;
        for (c, lw) in self.radii.iter().zip(&self.log_weights) {
            let w = (lw - (r - c) * (r - c) * inv_2s2 - max).exp();
            total += w;
            dr -= w * (r - c) * 2.0 * inv_2s2;
        }
        if let Some(out) = score {
            if r > 0.0 {
                let g = dr / total / r;
                out[0] = g * x[0];
                out[1] = g * x[1];
            } else {
                out.fill(0.0);
            }
        }
        max + total.ln()
    }
}

impl LogDensity for Rings {
    fn dim(&self) -> usize {
        2
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None)
    }
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.evaluate(x, Some(out));
    }
    fn log_density_and_score(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.evaluate(x, Some(out))
    }
}

impl TargetDensity for Rings {
    fn name(&self) -> &str {
        "rings"
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(self.log_z)
    }

    /// Per-ring polar sampling: ring uniformly (equal mass), radius from
    /// `r exp(-(r - r_k)^2 / 2s^2)` on `r > 0` by rejection, angle uniform.
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Option<ParticleCloud> {
        let s = self.radial_std;
        let ring = Uniform::new(0, self.radii.len()).ok()?;
        let angle = Uniform::new(0.0, 2.0 * std::f64::consts::PI).ok()?;
        let mut flat = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let c = self.radii[ring.sample(rng)];
            // envelope: r <= c + 8s, proposal N(c, s^2) truncated to r > 0
            let bound = c + 8.0 * s;
            let r = loop {
                let z: f64 = StandardNormal.sample(rng);
                let r = c + s * z;
                if r > 0.0 && rng.random::<f64>() * bound < r.min(bound) {
                    break r;
                }
            };
            let theta = angle.sample(rng);
            flat.push(r * theta.cos());
            flat.push(r * theta.sin());
        }
        ParticleCloud::from_flat(n, 2, flat).ok()
    }
}
