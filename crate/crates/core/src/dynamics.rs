//! Stochastic kernels: ULA, RMSprop-preconditioned ULA, MALA and HMC.
//!
//! Every kernel is a pure function of the current state, its configuration
//! and an RNG stream. Support handling differs per kernel:
//! - ULA / pULA leave the particle in place when the proposal falls outside
//!   the support and count the event as a clamp.
//! - MALA / HMC reject such proposals through the Metropolis step.
//!
//! The divergence correction term of the preconditioned diffusion is omitted
//! in pULA; the accumulator smoothing `alpha` should stay close to 1.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose, StreamDescriptor};
use crate::targets::{LogDensity, SCORE_OVERFLOW_GUARD};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub num_steps: usize,
    pub precondition: bool,
    /// Accumulator smoothing constant.
    pub alpha: f64,
    /// Stabilizer added to `sqrt(v)`.
    pub epsilon: f64,
    /// Start the accumulator at the first squared score instead of zero.
    pub warm_accumulator: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            num_steps: 100,
            precondition: false,
            alpha: 0.99,
            epsilon: 1e-5,
            warm_accumulator: false,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("Langevin step size must be positive"));
        }
        if self.num_steps == 0 {
            return Err(Error::invalid("Langevin step count must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("smoothing constant alpha must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("tolerance epsilon must be positive"));
        }
        Ok(())
    }
}

/// Per-particle RMSprop accumulator; starts at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspropState {
    pub v: Vec<f64>,
    pub updates: u64,
}

impl RmspropState {
    pub fn new(dim: usize) -> Self {
        Self { v: vec![0.0; dim], updates: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub num_transitions: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { step_size: 0.05, leapfrog_steps: 100, num_transitions: 100 }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.leapfrog_steps == 0 || self.num_transitions == 0 {
            return Err(Error::invalid("HMC step size, leapfrog steps and transitions must be positive"));
        }
        Ok(())
    }
}

/// Result of one HMC transition.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcOutcome {
    pub position: Vec<f64>,
    pub accepted: bool,
    /// `H(end) - H(start)`; infinite when the trajectory left the support.
    pub energy_error: f64,
}

/// Running counters of a chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStats {
    pub steps: u64,
    pub accepted: u64,
    pub clamped: u64,
}

impl ChainStats {
    pub fn merge(&mut self, other: &ChainStats) {
        self.steps += other.steps;
        self.accepted += other.accepted;
        self.clamped += other.clamped;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// Evaluates the score into `out` and applies the finiteness and overflow guards.
pub fn checked_score<D: LogDensity + ?Sized>(density: &D, x: &[f64], out: &mut [f64]) -> Result<()> {
    density.score_into(x, out);
    guard_score(x, out)
}

fn guard_score(x: &[f64], s: &[f64]) -> Result<()> {
    let norm2: f64 = s.iter().map(|v| v * v).sum();
    if !norm2.is_finite() {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { position: x.to_vec() });
        }
        return Err(Error::ScoreOverflow { norm: f64::INFINITY, position: x.to_vec() });
    }
    if norm2 > SCORE_OVERFLOW_GUARD * SCORE_OVERFLOW_GUARD {
        return Err(Error::ScoreOverflow { norm: norm2.sqrt(), position: x.to_vec() });
    }
    Ok(())
}

/// A single particle together with the buffers its kernels need.
#[derive(Debug, Clone)]
pub struct Chain {
    pub x: Vec<f64>,
    pub rmsprop: RmspropState,
    pub stats: ChainStats,
    grad: Vec<f64>,
    log_p: f64,
    cache_valid: bool,
    proposal: Vec<f64>,
    grad_proposal: Vec<f64>,
    momentum: Vec<f64>,
}

impl Chain {
    pub fn new(x: Vec<f64>) -> Self {
        let d = x.len();
        Self {
            x,
            rmsprop: RmspropState::new(d),
            stats: ChainStats::default(),
            grad: vec![0.0; d],
            log_p: f64::NAN,
            cache_valid: false,
            proposal: vec![0.0; d],
            grad_proposal: vec![0.0; d],
            momentum: vec![0.0; d],
        }
    }

    pub fn with_rmsprop(mut self, state: RmspropState) -> Self {
        self.rmsprop = state;
        self
    }

    /// Moves the chain to `x`, keeping the accumulator.
    pub fn reset_position(&mut self, x: &[f64]) {
        self.x.copy_from_slice(x);
        self.cache_valid = false;
    }

    fn commit_proposal<D: LogDensity + ?Sized>(&mut self, density: &D) {
        self.stats.steps += 1;
        if density.in_support(&self.proposal) {
            std::mem::swap(&mut self.x, &mut self.proposal);
            self.stats.accepted += 1;
            self.cache_valid = false;
        } else {
            self.stats.clamped += 1;
        }
    }

    /// `x + eta * s + sqrt(2 eta) xi`, using an externally supplied score.
    pub fn ula_with_score<R: Rng + ?Sized>(&mut self, score: &[f64], eta: f64, rng: &mut R) {
        let noise = (2.0 * eta).sqrt();
        for ((p, x), s) in self.proposal.iter_mut().zip(&self.x).zip(score) {
            let xi: f64 = StandardNormal.sample(rng);
            *p = x + eta * s + noise * xi;
        }
    }

    /// RMSprop-preconditioned move with an externally supplied score; updates the accumulator.
    pub fn pula_with_score<R: Rng + ?Sized>(&mut self, score: &[f64], cfg: &LangevinConfig, rng: &mut R) {
        let eta = cfg.step_size;
        let (keep, fresh) =
            if cfg.warm_accumulator && self.rmsprop.updates == 0 { (0.0, 1.0) } else { (cfg.alpha, 1.0 - cfg.alpha) };
        self.rmsprop.updates += 1;
        for (((p, x), s), v) in self.proposal.iter_mut().zip(&self.x).zip(score).zip(self.rmsprop.v.iter_mut()) {
            *v = keep * *v + fresh * s * s;
            let precond = 1.0 / (v.sqrt() + cfg.epsilon);
            let xi: f64 = StandardNormal.sample(rng);
            *p = x + eta * precond * s + (2.0 * eta * precond).sqrt() * xi;
        }
    }

    /// ULA or pULA move driven by an externally supplied score; the proposal is
    /// always accepted (the implied density has full support).
    pub fn advance_with_score<R: Rng + ?Sized>(
        &mut self,
        score: &[f64],
        cfg: &LangevinConfig,
        rng: &mut R,
    ) -> Result<()> {
        guard_score(&self.x, score)?;
        if cfg.precondition {
            self.pula_with_score(score, cfg, rng);
        } else {
            self.ula_with_score(score, cfg.step_size, rng);
        }
        std::mem::swap(&mut self.x, &mut self.proposal);
        self.stats.steps += 1;
        self.stats.accepted += 1;
        self.cache_valid = false;
        Ok(())
    }

    /// One ULA step against `density`.
    pub fn ula<D: LogDensity + ?Sized, R: Rng + ?Sized>(&mut self, density: &D, eta: f64, rng: &mut R) -> Result<()> {
        checked_score(density, &self.x, &mut self.grad)?;
        let grad = std::mem::take(&mut self.grad);
        self.ula_with_score(&grad, eta, rng);
        self.grad = grad;
        self.commit_proposal(density);
        Ok(())
    }

    /// One pULA step; falls back to plain ULA when preconditioning is off.
    pub fn pula<D: LogDensity + ?Sized, R: Rng + ?Sized>(
        &mut self,
        density: &D,
        cfg: &LangevinConfig,
        rng: &mut R,
    ) -> Result<()> {
        if !cfg.precondition {
            return self.ula(density, cfg.step_size, rng);
        }
        checked_score(density, &self.x, &mut self.grad)?;
        let grad = std::mem::take(&mut self.grad);
        self.pula_with_score(&grad, cfg, rng);
        self.grad = grad;
        self.commit_proposal(density);
        Ok(())
    }

    fn refresh_cache<D: LogDensity + ?Sized>(&mut self, density: &D) -> Result<()> {
        if !self.cache_valid {
            self.log_p = density.log_density_and_score(&self.x, &mut self.grad);
            if !self.log_p.is_finite() {
                return Err(Error::NonFiniteLogDensity { position: self.x.clone() });
            }
            guard_score(&self.x, &self.grad)?;
            self.cache_valid = true;
        }
        Ok(())
    }

    /// One MALA step. Returns whether the proposal was accepted.
    pub fn mala<D: LogDensity + ?Sized, R: Rng + ?Sized>(
        &mut self,
        density: &D,
        eta: f64,
        rng: &mut R,
    ) -> Result<bool> {
        self.refresh_cache(density)?;
        let grad = std::mem::take(&mut self.grad);
        self.ula_with_score(&grad, eta, rng);
        self.grad = grad;
        let u: f64 = rng.random();
        self.stats.steps += 1;

        if !density.in_support(&self.proposal) {
            return Ok(false);
        }
        let log_p_new = density.log_density_and_score(&self.proposal, &mut self.grad_proposal);
        if !log_p_new.is_finite() || guard_score(&self.proposal, &self.grad_proposal).is_err() {
            return Ok(false);
        }
        // log q(to | from) = -|to - from - eta grad(from)|^2 / (4 eta)
        let mut forward = 0.0;
        let mut backward = 0.0;
        for i in 0..self.x.len() {
            let f = self.proposal[i] - self.x[i] - eta * self.grad[i];
            let b = self.x[i] - self.proposal[i] - eta * self.grad_proposal[i];
            forward += f * f;
            backward += b * b;
        }
        let log_ratio = log_p_new - self.log_p + (forward - backward) / (4.0 * eta);
        if u.ln() < log_ratio {
            std::mem::swap(&mut self.x, &mut self.proposal);
            std::mem::swap(&mut self.grad, &mut self.grad_proposal);
            self.log_p = log_p_new;
            self.stats.accepted += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// One HMC transition with a fresh `N(0, I)` momentum.
    pub fn hmc<D: LogDensity + ?Sized, R: Rng + ?Sized>(
        &mut self,
        density: &D,
        cfg: &HmcConfig,
        rng: &mut R,
    ) -> Result<HmcOutcome> {
        self.refresh_cache(density)?;
        for p in self.momentum.iter_mut() {
            *p = StandardNormal.sample(rng);
        }
        let u: f64 = rng.random();
        self.stats.steps += 1;
        let kinetic = |m: &[f64]| 0.5 * m.iter().map(|v| v * v).sum::<f64>();
        let h0 = -self.log_p + kinetic(&self.momentum);

        let eps = cfg.step_size;
        self.proposal.copy_from_slice(&self.x);
        self.grad_proposal.copy_from_slice(&self.grad);
        let mut log_p_new = self.log_p;
        let mut diverged = false;
        for (p, g) in self.momentum.iter_mut().zip(&self.grad_proposal) {
            *p += 0.5 * eps * g;
        }
        for l in 0..cfg.leapfrog_steps {
            for (q, p) in self.proposal.iter_mut().zip(&self.momentum) {
                *q += eps * p;
            }
            if !density.in_support(&self.proposal) {
                diverged = true;
                break;
            }
            log_p_new = density.log_density_and_score(&self.proposal, &mut self.grad_proposal);
            if !log_p_new.is_finite() || self.grad_proposal.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            let scale = if l + 1 == cfg.leapfrog_steps { 0.5 * eps } else { eps };
            for (p, g) in self.momentum.iter_mut().zip(&self.grad_proposal) {
                *p += scale * g;
            }
        }
        let h1 = if diverged { f64::INFINITY } else { -log_p_new + kinetic(&self.momentum) };
        let energy_error = h1 - h0;
        let accepted = energy_error.is_finite() && u.ln() < -energy_error;
        if accepted {
            std::mem::swap(&mut self.x, &mut self.proposal);
            std::mem::swap(&mut self.grad, &mut self.grad_proposal);
            self.log_p = log_p_new;
            self.stats.accepted += 1;
        }
        Ok(HmcOutcome { position: self.x.clone(), accepted, energy_error })
    }

    /// Applies `kernel` once.
    pub fn step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
        &mut self,
        density: &D,
        kernel: &Kernel,
        rng: &mut R,
    ) -> Result<()> {
        match kernel {
            Kernel::Ula { step_size } => self.ula(density, *step_size, rng),
            Kernel::Pula(cfg) => self.pula(density, cfg, rng),
            Kernel::Mala { step_size } => self.mala(density, *step_size, rng).map(|_| ()),
            Kernel::Hmc(cfg) => self.hmc(density, cfg, rng).map(|_| ()),
        }
    }
}

/// `x + eta * score(x) + sqrt(2 eta) xi`.
pub fn ula_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    density: &D,
    eta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut chain = Chain::new(x.to_vec());
    chain.ula(density, eta, rng)?;
    Ok(chain.x)
}

/// One RMSprop-preconditioned ULA step; returns the new position and accumulator.
pub fn pula_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    density: &D,
    state: &RmspropState,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, RmspropState)> {
    let mut chain = Chain::new(x.to_vec()).with_rmsprop(state.clone());
    chain.pula(density, cfg, rng)?;
    Ok((chain.x, chain.rmsprop))
}

pub fn mala_step<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    density: &D,
    eta: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let mut chain = Chain::new(x.to_vec());
    let accepted = chain.mala(density, eta, rng)?;
    Ok((chain.x, accepted))
}

pub fn hmc_transition<D: LogDensity + ?Sized, R: Rng + ?Sized>(
    x: &[f64],
    density: &D,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<HmcOutcome> {
    Chain::new(x.to_vec()).hmc(density, cfg, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Ula { step_size: f64 },
    Pula(LangevinConfig),
    Mala { step_size: f64 },
    Hmc(HmcConfig),
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Ula { step_size } | Kernel::Mala { step_size } if !(*step_size > 0.0) => {
                Err(Error::invalid("step size must be positive"))
            }
            Kernel::Pula(cfg) => cfg.validate(),
            Kernel::Hmc(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub cloud: ParticleCloud,
    pub stats: ChainStats,
}

/// Runs `steps` applications of `kernel` on every particle independently.
///
/// Particle `i` at step `k` draws from substream `(seed, Chain, i, k)`, so the
/// output is identical for any number of worker threads.
pub fn run_chain<D: LogDensity + ?Sized>(
    x0: &ParticleCloud,
    density: &D,
    kernel: &Kernel,
    steps: usize,
    seed: u64,
) -> Result<ChainRun> {
    kernel.validate()?;
    if x0.dim() != density.dim() {
        return Err(Error::DimensionMismatch { expected: density.dim(), got: x0.dim() });
    }
    let results: Vec<Result<Chain>> = (0..x0.len())
        .into_par_iter()
        .map(|i| {
            let mut chain = Chain::new(x0.particle(i).to_vec());
            for k in 0..steps {
                let mut rng = substream(seed, Purpose::Chain, i as u64, k as u64);
                chain.step(density, kernel, &mut rng)?;
            }
            Ok(chain)
        })
        .collect();
    let mut stats = ChainStats::default();
    let mut flat = Vec::with_capacity(x0.len() * x0.dim());
    for chain in results {
        let chain = chain?;
        stats.merge(&chain.stats);
        flat.extend_from_slice(&chain.x);
    }
    if stats.clamped > 0 {
        log::warn!("{} proposals left the support and were clamped", stats.clamped);
    }
    let cloud = ParticleCloud::from_flat(x0.len(), x0.dim(), flat)?
        .with_stream(StreamDescriptor { seed, purpose: Purpose::Chain });
    Ok(ChainRun { cloud, stats })
}
