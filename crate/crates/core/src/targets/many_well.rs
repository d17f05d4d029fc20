//! Product of identical 2D double-well blocks.
//!
//! Block log-density: `-x^4 + 6 x^2 + tilt * x - y^2 / 2`. The quartic
//! coefficients follow the common many-well benchmark; `tilt` defaults to 0,
//! giving a potential that is even in every double-well coordinate.

use rand::distr::Distribution;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LogDensity, TargetDensity};
use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};

const QUAD_LO: f64 = -6.0;
const QUAD_HI: f64 = 6.0;
const QUAD_CELLS: usize = 24_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManyWellSpec {
    pub dim: usize,
    pub quartic: f64,
    pub quadratic: f64,
    pub tilt: f64,
}

impl Default for ManyWellSpec {
    fn default() -> Self {
        Self { dim: 8, quartic: 1.0, quadratic: 6.0, tilt: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ManyWell {
    spec: ManyWellSpec,
    log_z: f64,
    /// Tabulated CDF of the double-well marginal on a uniform grid.
    grid: Vec<f64>,
    cdf: Vec<f64>,
    well_modes: [f64; 2],
}

pub fn make_many_well(spec: &ManyWellSpec) -> Result<ManyWell> {
    if spec.dim == 0 || !spec.dim.is_multiple_of(2) {
        return Err(Error::invalid(format!("many-well needs an even dimension, got {}", spec.dim)));
    }
    if !(spec.quartic > 0.0 && spec.quadratic > 0.0) {
        return Err(Error::invalid("quartic and quadratic coefficients must be positive"));
    }
    let well = |x: f64| -spec.quartic * x.powi(4) + spec.quadratic * x * x + spec.tilt * x;

    // Trapezoid CDF of exp(well) on a fine grid; the integrand is ~e^-1000 at the ends.
    let h = (QUAD_HI - QUAD_LO) / QUAD_CELLS as f64;
    let grid: Vec<f64> = (0..=QUAD_CELLS).map(|i| QUAD_LO + i as f64 * h).collect();
    let shift = grid.iter().map(|&x| well(x)).fold(f64::NEG_INFINITY, f64::max);
    let vals: Vec<f64> = grid.iter().map(|&x| (well(x) - shift).exp()).collect();
    let mut cdf = Vec::with_capacity(vals.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in vals.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        cdf.push(acc);
    }
    let total = acc;
    cdf.iter_mut().for_each(|c| *c /= total);
    let log_z_block = shift + total.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();

    // Newton on the well derivative from either side of the barrier.
    let x0 = (spec.quadratic / (2.0 * spec.quartic)).sqrt();
    let newton = |mut x: f64| {
        for _ in 0..100 {
            let g = -4.0 * spec.quartic * x.powi(3) + 2.0 * spec.quadratic * x + spec.tilt;
            let hss = -12.0 * spec.quartic * x * x + 2.0 * spec.quadratic;
            x -= g / hss;
        }
        x
    };
    Ok(ManyWell {
        spec: spec.clone(),
        log_z: (spec.dim / 2) as f64 * log_z_block,
        grid,
        cdf,
        well_modes: [newton(-x0), newton(x0)],
    })
}

impl ManyWell {
    pub fn blocks(&self) -> usize {
        self.spec.dim / 2
    }

    pub fn well_modes(&self) -> [f64; 2] {
        self.well_modes
    }

    fn sample_well(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[i - 1] + frac * (self.grid[i] - self.grid[i - 1])
    }
}

impl LogDensity for ManyWell {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let s = &self.spec;
        x.chunks_exact(2)
            .map(|b| {
                let (a, y) = (b[0], b[1]);
                -s.quartic * a.powi(4) + s.quadratic * a * a + s.tilt * a - 0.5 * y * y
            })
            .sum()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let s = &self.spec;
        for (b, o) in x.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
            o[0] = -4.0 * s.quartic * b[0].powi(3) + 2.0 * s.quadratic * b[0] + s.tilt;
            o[1] = -b[1];
        }
    }
}

impl TargetDensity for ManyWell {
    fn name(&self) -> &str {
        "many_well"
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(self.log_z)
    }

    /// Inverse-CDF draws for the double-well coordinates, Gaussian draws for the rest.
    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Option<ParticleCloud> {
        let d = self.spec.dim;
        let mut flat = Vec::with_capacity(n * d);
        for _ in 0..n {
            for _ in 0..self.blocks() {
                flat.push(self.sample_well(rng.random::<f64>()));
                flat.push(StandardNormal.sample(rng));
            }
        }
        ParticleCloud::from_flat(n, d, flat).ok()
    }

    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        let blocks = self.blocks();
        let centers = (0..1usize << blocks)
            .map(|mask| (0..blocks).flat_map(|b| [self.well_modes[(mask >> b) & 1], 0.0]).collect())
            .collect();
        Some(centers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(make_many_well(&ManyWellSpec { dim: 7, ..Default::default() }).is_err());
    }

    #[test]
    fn symmetric_under_well_reflection() {
        let mw = make_many_well(&ManyWellSpec::default()).unwrap();
        let x = [0.3, -0.2, 1.7, 0.4, -1.1, 2.0, 0.05, -0.9];
        for b in 0..4 {
            let mut y = x;
            y[2 * b] = -y[2 * b];
            assert_eq!(mw.log_density(&x), mw.log_density(&y));
        }
    }

    #[test]
    fn modes_sit_at_sqrt3() {
        let mw = make_many_well(&ManyWellSpec::default()).unwrap();
        let [a, b] = mw.well_modes();
        assert!((a + 3f64.sqrt()).abs() < 1e-12);
        assert!((b - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(mw.mode_centers().unwrap().len(), 16);
    }

    #[test]
    fn block_normalizer_matches_fine_simpson() {
        let mw = make_many_well(&ManyWellSpec { dim: 2, ..Default::default() }).unwrap();
        let n = 200_000;
        let (lo, hi) = (-8.0f64, 8.0f64);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (-x.powi(4) + 6.0 * x * x).exp();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
        }
        let z = s * h / 3.0 * (2.0 * std::f64::consts::PI).sqrt();
        assert!((mw.log_normalizer().unwrap() - z.ln()).abs() < 1e-7);
    }
}
