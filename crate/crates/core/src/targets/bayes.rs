//! Posterior over the centres of a 1D Gaussian mixture with known variance
//! and a uniform box prior. Invariant under permutations of the centres.

use rand::distr::{Distribution, Uniform};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LogDensity, TargetDensity};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Synthetic experiment: observations drawn from an equal-weight mixture
/// with the given `centers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesPosteriorSpec {
    pub centers: Vec<f64>,
    pub num_observations: usize,
    pub sigma2: f64,
    pub lower: f64,
    pub upper: f64,
    pub observation_seed: u64,
    /// Explicit observations; overrides the synthetic draw when present.
    pub observations: Option<Vec<f64>>,
}

impl Default for BayesPosteriorSpec {
    fn default() -> Self {
        Self {
            centers: vec![-3.0, 0.0, 3.0, 6.0],
            num_observations: 100,
            sigma2: 0.55 * 0.55,
            lower: -10.0,
            upper: 10.0,
            observation_seed: 0,
            observations: None,
        }
    }
}

impl BayesPosteriorSpec {
    pub fn observations(&self) -> Vec<f64> {
        if let Some(obs) = &self.observations {
            return obs.clone();
        }
        let mut rng = substream(self.observation_seed, Purpose::Observations, 0, 0);
        let pick = Uniform::new(0, self.centers.len().max(1)).expect("nonempty centers");
        let sd = self.sigma2.sqrt();
        (0..self.num_observations)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.centers[pick.sample(&mut rng)] + sd * z
            })
            .collect()
    }

    pub fn build(&self) -> Result<BayesGmmPosterior> {
        if self.centers.is_empty() {
            return Err(Error::invalid("need at least one mixture centre"));
        }
        let mut post =
            make_bayes_gmm_posterior(&self.observations(), self.centers.len(), self.sigma2, (self.lower, self.upper))?;
        post.true_centers = Some(self.centers.clone());
        Ok(post)
    }
}

#[derive(Debug, Clone)]
pub struct BayesGmmPosterior {
    observations: Vec<f64>,
    k: usize,
    sigma2: f64,
    lower: f64,
    upper: f64,
    true_centers: Option<Vec<f64>>,
}

pub fn make_bayes_gmm_posterior(
    observations: &[f64],
    k: usize,
    sigma2: f64,
    bounds: (f64, f64),
) -> Result<BayesGmmPosterior> {
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2 must be positive"));
    }
    if !(bounds.0 < bounds.1) {
        return Err(Error::invalid("prior box needs a < b"));
    }
    Ok(BayesGmmPosterior {
        observations: observations.to_vec(),
        k,
        sigma2,
        lower: bounds.0,
        upper: bounds.1,
        true_centers: None,
    })
}

impl BayesGmmPosterior {
    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    fn evaluate(&self, theta: &[f64], mut score: Option<&mut [f64]>) -> f64 {
        if let Some(out) = score.as_deref_mut() {
            out.fill(0.0);
        }
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let inv = 1.0 / self.sigma2;
        let log_coef = -(self.k as f64).ln() - 0.5 * (LN_2PI + self.sigma2.ln());
        let mut terms = [0.0f64; 16];
        let mut heap;
        let terms: &mut [f64] = if self.k <= terms.len() {
            &mut terms[..self.k]
        } else {
            heap = vec![0.0; self.k];
            &mut heap
        };
        let mut total = 0.0;
        for &y in &self.observations {
            let mut max = f64::NEG_INFINITY;
            for (t, th) in terms.iter_mut().zip(theta) {
                *t = -0.5 * (y - th) * (y - th) * inv;
                max = max.max(*t);
            }
            let mut sum = 0.0;
            for t in terms.iter_mut() {
                *t = (*t - max).exp();
                sum += *t;
            }
            total += log_coef + max + sum.ln();
            if let Some(out) = score.as_deref_mut() {
                for ((o, t), th) in out.iter_mut().zip(terms.iter()).zip(theta) {
                    *o += t / sum * (y - th) * inv;
                }
            }
        }
        total
    }
}

impl LogDensity for BayesGmmPosterior {
    fn dim(&self) -> usize {
        self.k
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

    fn in_support(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v > self.lower && v < self.upper)
    }
}

impl TargetDensity for BayesGmmPosterior {
    fn name(&self) -> &str {
        "bayes_gmm"
    }

    /// All permutations of the generating centres.
    fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        self.true_centers.as_ref().map(|c| permutations(c))
    }
}

/// Every ordering of `items` (Heap's algorithm).
pub fn permutations(items: &[f64]) -> Vec<Vec<f64>> {
    let mut a = items.to_vec();
    let n = a.len();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}
