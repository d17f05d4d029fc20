//! End-to-end sampler: Langevin initialization at `T0` driven by the estimated
//! score of `p_{X_T0}`, then explicit Euler integration of the probability-flow
//! ODE up to `T_end` with Monte Carlo velocity estimates.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{mmd, w2, W2Config};
use crate::cloud::ParticleCloud;
use crate::dynamics::{Chain, LangevinConfig};
use crate::error::{Error, Result};
use crate::interpolant::{
    estimate_velocity_warm, DenoisingProblem, InnerCloud, VelocityDiagnostics, VelocityEstimatorConfig,
};
use crate::rng::{substream, Purpose, StreamDescriptor};
use crate::targets::TargetDensity;

/// Below this `T0` the ablation skips Langevin initialization.
pub const GAUSSIAN_INIT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub t0: f64,
    pub t_end: f64,
    /// Number of Euler steps `M`.
    pub steps: usize,
    pub init_step_size: f64,
    /// Langevin initialization steps `L`; zero keeps the Gaussian draw.
    pub init_steps: usize,
    pub init_precondition: bool,
    pub velocity: VelocityEstimatorConfig,
    pub n_particles: usize,
    /// Store the cloud every this many Euler steps.
    pub checkpoint_every: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t0: 0.2,
            t_end: 0.99,
            steps: 100,
            init_step_size: 0.1,
            init_steps: 100,
            init_precondition: false,
            velocity: VelocityEstimatorConfig::default(),
            n_particles: 1000,
            checkpoint_every: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 < self.t_end && self.t_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < t0 < t_end < 1, got t0 = {}, t_end = {}",
                self.t0, self.t_end
            )));
        }
        if self.steps == 0 {
            return Err(Error::invalid("flow needs at least one Euler step"));
        }
        if !(self.init_step_size > 0.0 && self.init_step_size.is_finite()) {
            return Err(Error::invalid("init_step_size must be positive"));
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        self.velocity.validate()
    }

    /// Langevin settings of the initialization stage.
    pub fn init_langevin(&self) -> LangevinConfig {
        LangevinConfig {
            step_size: self.init_step_size,
            num_steps: self.init_steps,
            precondition: self.init_precondition,
            ..self.velocity.inner
        }
    }

    /// Default checkpoint cadence `ceil(M / 10)`.
    pub fn default_checkpoint_cadence(&self) -> usize {
        self.steps.div_ceil(10)
    }

    /// Toggles preconditioning of both the initialization and the inner chains.
    pub fn with_precondition(mut self, on: bool) -> Self {
        self.init_precondition = on;
        self.velocity.inner.precondition = on;
        self
    }
}

/// `t_m = t0 + m h` for `m = 0..=steps`, with the last point set to `t_end` exactly.
pub fn time_grid(t0: f64, t_end: f64, steps: usize) -> Vec<f64> {
    let h = (t_end - t0) / steps as f64;
    let mut grid: Vec<f64> = (0..=steps).map(|m| t0 + m as f64 * h).collect();
    if let Some(last) = grid.last_mut() {
        *last = t_end;
    }
    grid
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub init_secs: f64,
    pub flow_secs: f64,
}

/// Velocity-estimator diagnostics aggregated over particles at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mean_ess: f64,
    pub min_ess: f64,
    pub mean_drift: f64,
    pub clamped: u64,
    pub inner_step: f64,
}

impl StepDiagnostics {
    fn aggregate(t: f64, diags: &[VelocityDiagnostics]) -> Self {
        let n = diags.len().max(1) as f64;
        let ess: Vec<f64> = diags.iter().map(|d| d.effective_sample_size).filter(|e| e.is_finite()).collect();
        let (mean_ess, min_ess) = if ess.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (ess.iter().sum::<f64>() / ess.len() as f64, ess.iter().copied().fold(f64::INFINITY, f64::min))
        };
        Self {
            t,
            mean_ess,
            min_ess,
            mean_drift: diags.iter().map(|d| d.drift_norm).sum::<f64>() / n,
            clamped: diags.iter().map(|d| d.clamped).sum(),
            inner_step: diags.first().map_or(f64::NAN, |d| d.inner_step),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub t: f64,
    #[serde(skip)]
    pub cloud: Option<ParticleCloud>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, step: usize, t: f64, message: String },
}

/// Everything needed to report and replay one sampler run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: FlowConfig,
    pub seed: u64,
    pub target: String,
    pub timings: StageTimings,
    pub status: RunStatus,
    /// Flow steps completed before the run ended.
    pub completed_steps: usize,
    pub init_diagnostics: Vec<StepDiagnostics>,
    pub flow_diagnostics: Vec<StepDiagnostics>,
    pub checkpoints: Vec<Checkpoint>,
    #[serde(skip)]
    pub cloud: Option<ParticleCloud>,
}

impl RunRecord {
    fn new(cfg: &FlowConfig, seed: u64, target: &str) -> Self {
        Self {
            config: *cfg,
            seed,
            target: target.to_string(),
            timings: StageTimings::default(),
            status: RunStatus::Completed,
            completed_steps: 0,
            init_diagnostics: Vec::new(),
            flow_diagnostics: Vec::new(),
            checkpoints: Vec::new(),
            cloud: None,
        }
    }

    /// Final (or last good) cloud.
    pub fn cloud(&self) -> Option<&ParticleCloud> {
        self.cloud.as_ref()
    }
}

/// A failed run: the error plus whatever state the run reached.
#[derive(Debug)]
pub struct SsiFailure {
    pub error: Error,
    pub partial: Box<RunRecord>,
}

impl std::fmt::Display for SsiFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for SsiFailure {}

impl From<SsiFailure> for Error {
    fn from(f: SsiFailure) -> Self {
        f.error
    }
}

/// `n` independent draws from `N(0, I_d)`; particle `i` uses its own substream.
pub fn gaussian_cloud(n: usize, d: usize, seed: u64) -> ParticleCloud {
    let flat: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = substream(seed, Purpose::InitialDraw, i as u64, 0);
            (0..d).map(move |_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
        })
        .collect();
    ParticleCloud::from_flat(n, d, flat)
        .expect("shape is consistent by construction")
        .with_stream(StreamDescriptor { seed, purpose: Purpose::InitialDraw })
}

struct Particle {
    chain: Chain,
    carry: InnerCloud,
}

#[allow(clippy::too_many_arguments)]
fn velocity_at(
    target: &dyn TargetDensity,
    cfg: &VelocityEstimatorConfig,
    t: f64,
    x: &[f64],
    rng_purpose: Purpose,
    seed: u64,
    particle: usize,
    step: usize,
    carry: &mut InnerCloud,
) -> Result<(Vec<f64>, VelocityDiagnostics)> {
    let prob = DenoisingProblem::new(t, x, target)?;
    let mut rng = substream(seed, rng_purpose, particle as u64, step as u64);
    let est = estimate_velocity_warm(&prob, cfg, &mut rng, carry)?;
    if est.velocity.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteVelocity { particle, t });
    }
    Ok((est.velocity, est.diagnostics))
}

fn collect_cloud(particles: &[Particle], d: usize) -> ParticleCloud {
    let flat: Vec<f64> = particles.iter().flat_map(|p| p.chain.x.iter().copied()).collect();
    ParticleCloud::from_flat(particles.len(), d, flat).expect("shape is consistent by construction")
}

fn first_error(results: Vec<Result<VelocityDiagnostics>>) -> Result<Vec<VelocityDiagnostics>> {
    results.into_iter().collect()
}

fn init_stage(
    particles: &mut [Particle],
    cfg: &FlowConfig,
    target: &dyn TargetDensity,
    seed: u64,
    diagnostics: &mut Vec<StepDiagnostics>,
) -> Result<()> {
    let langevin = cfg.init_langevin();
    let schedule = crate::interpolant::InterpolantSchedule::linear();
    for l in 0..cfg.init_steps {
        let results: Vec<Result<VelocityDiagnostics>> = particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| {
                let (u, diag) = velocity_at(
                    target,
                    &cfg.velocity,
                    cfg.t0,
                    &p.chain.x,
                    Purpose::InitVelocity,
                    seed,
                    i,
                    l,
                    &mut p.carry,
                )?;
                let score = schedule.score_from_velocity(cfg.t0, &p.chain.x, &u);
                let mut rng = substream(seed, Purpose::InitNoise, i as u64, l as u64);
                p.chain.advance_with_score(&score, &langevin, &mut rng)?;
                Ok(diag)
            })
            .collect();
        diagnostics.push(StepDiagnostics::aggregate(cfg.t0, &first_error(results)?));
    }
    Ok(())
}

/// Draws `n_particles` from `N(0, I)` and runs `L` Langevin steps on the
/// estimated score of `p_{X_T0}`.
pub fn initialize_flow(cfg: &FlowConfig, target: &dyn TargetDensity, seed: u64) -> Result<ParticleCloud> {
    cfg.validate()?;
    let d = target.dim();
    let x0 = gaussian_cloud(cfg.n_particles, d, seed);
    let mut particles: Vec<Particle> =
        x0.rows().map(|x| Particle { chain: Chain::new(x.to_vec()), carry: InnerCloud::default() }).collect();
    init_stage(&mut particles, cfg, target, seed, &mut Vec::new())?;
    Ok(collect_cloud(&particles, d))
}

/// Euler integration of the probability-flow ODE from `cfg.t0` to `cfg.t_end`.
pub fn integrate_flow(
    x_t0: &ParticleCloud,
    cfg: &FlowConfig,
    target: &dyn TargetDensity,
    seed: u64,
) -> Result<ParticleCloud> {
    cfg.validate()?;
    check_start(x_t0, target)?;
    let mut particles: Vec<Particle> =
        x_t0.rows().map(|x| Particle { chain: Chain::new(x.to_vec()), carry: InnerCloud::default() }).collect();
    let mut record = RunRecord::new(cfg, seed, target.name());
    flow_stage(&mut particles, cfg, target, seed, &mut record)?;
    Ok(collect_cloud(&particles, target.dim()))
}

fn check_start(x: &ParticleCloud, target: &dyn TargetDensity) -> Result<()> {
    if x.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: x.dim() });
    }
    if !x.is_finite() {
        return Err(Error::invalid("flow start contains non-finite particles"));
    }
    Ok(())
}

fn flow_stage(
    particles: &mut [Particle],
    cfg: &FlowConfig,
    target: &dyn TargetDensity,
    seed: u64,
    record: &mut RunRecord,
) -> Result<()> {
    let grid = time_grid(cfg.t0, cfg.t_end, cfg.steps);
    let d = target.dim();
    for m in 0..cfg.steps {
        let (t, h) = (grid[m], grid[m + 1] - grid[m]);
        let results: Vec<Result<VelocityDiagnostics>> = particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| {
                let (u, diag) =
                    velocity_at(target, &cfg.velocity, t, &p.chain.x, Purpose::FlowVelocity, seed, i, m, &mut p.carry)?;
                for (x, u) in p.chain.x.iter_mut().zip(&u) {
                    *x += h * u;
                }
                Ok(diag)
            })
            .collect();
        let diags = first_error(results)?;
        record.flow_diagnostics.push(StepDiagnostics::aggregate(t, &diags));
        record.completed_steps = m + 1;
        if let Some(every) = cfg.checkpoint_every {
            if (m + 1) % every == 0 || m + 1 == cfg.steps {
                record.checkpoints.push(Checkpoint {
                    step: m + 1,
                    t: grid[m + 1],
                    cloud: Some(collect_cloud(particles, d)),
                });
            }
        }
        log::debug!("flow step {}/{} at t = {:.4}", m + 1, cfg.steps, grid[m + 1]);
    }
    Ok(())
}

/// Euler integration with a caller-supplied velocity `u(particle, step, t, x)`.
pub fn integrate_flow_with<F>(x_t0: &ParticleCloud, grid: &[f64], velocity: F) -> Result<ParticleCloud>
where
    F: Fn(usize, usize, f64, &[f64]) -> Result<Vec<f64>> + Sync,
{
    let d = x_t0.dim();
    let flat: Vec<Result<Vec<f64>>> = (0..x_t0.len())
        .into_par_iter()
        .map(|i| {
            let mut x = x_t0.particle(i).to_vec();
            for m in 0..grid.len().saturating_sub(1) {
                let (t, h) = (grid[m], grid[m + 1] - grid[m]);
                let u = velocity(i, m, t, &x)?;
                if u.len() != d || u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteVelocity { particle: i, t });
                }
                for (x, u) in x.iter_mut().zip(&u) {
                    *x += h * u;
                }
            }
            Ok(x)
        })
        .collect();
    let mut out = Vec::with_capacity(x_t0.len() * d);
    for row in flat {
        out.extend(row?);
    }
    ParticleCloud::from_flat(x_t0.len(), d, out)
}

/// Full pipeline: Gaussian draw, Langevin initialization, Euler flow.
///
/// Replaying the same `(cfg, seed)` reproduces the cloud bitwise, whatever the
/// number of worker threads.
pub fn run_ssi(cfg: &FlowConfig, target: &dyn TargetDensity, seed: u64) -> std::result::Result<RunRecord, SsiFailure> {
    let mut record = RunRecord::new(cfg, seed, target.name());
    let fail = |record: RunRecord, stage: &str, step: usize, t: f64, error: Error| {
        let mut partial = record;
        partial.status = RunStatus::Failed { stage: stage.to_string(), step, t, message: error.to_string() };
        SsiFailure { error, partial: Box::new(partial) }
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(record, "validate", 0, cfg.t0, e));
    }
    let d = target.dim();

    let start = Instant::now();
    let x0 = gaussian_cloud(cfg.n_particles, d, seed);
    let mut particles: Vec<Particle> =
        x0.rows().map(|x| Particle { chain: Chain::new(x.to_vec()), carry: InnerCloud::default() }).collect();
    let mut init_diag = Vec::new();
    let init = init_stage(&mut particles, cfg, target, seed, &mut init_diag);
    record.init_diagnostics = init_diag;
    record.timings.init_secs = start.elapsed().as_secs_f64();
    if let Err(e) = init {
        let step = record.init_diagnostics.len();
        record.cloud = Some(collect_cloud(&particles, d));
        return Err(fail(record, "init", step, cfg.t0, e));
    }
    log::info!("initialization done in {:.1}s", record.timings.init_secs);

    // carried inner clouds target p(X_1 | X_T0) and stay valid for the first flow step
    let start = Instant::now();
    let flow = flow_stage(&mut particles, cfg, target, seed, &mut record);
    record.timings.flow_secs = start.elapsed().as_secs_f64();
    record.cloud = Some(collect_cloud(&particles, d));
    if let Err(e) = flow {
        let step = record.completed_steps;
        let t = time_grid(cfg.t0, cfg.t_end, cfg.steps)[step];
        return Err(fail(record, "flow", step, t, e));
    }
    log::info!("flow done in {:.1}s", record.timings.flow_secs);
    Ok(record)
}

/// One `(T0, preconditioning, seed)` cell of the initialization-time sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub t0: f64,
    pub precondition: bool,
    pub seed: u64,
    pub mmd: f64,
    pub w2: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAggregate {
    pub t0: f64,
    pub precondition: bool,
    pub mmd: f64,
    pub w2: f64,
    /// Seeds that completed.
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub w2: W2Config,
    /// Compare both with and without preconditioning.
    pub both_preconditioning: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { w2: W2Config::default(), both_preconditioning: true }
    }
}

/// Sweeps the initialization time. Cells below [`GAUSSIAN_INIT_THRESHOLD`] use
/// `L = 0`. Failed cells are recorded and the sweep carries on.
pub fn ablate_t0(
    grid: &[f64],
    base: &FlowConfig,
    target: &dyn TargetDensity,
    seeds: &[u64],
    reference: &ParticleCloud,
    opts: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs a non-empty grid and seed list"));
    }
    if let Some(bad) = grid.iter().find(|t| !(**t > 0.0 && **t < base.t_end)) {
        return Err(Error::invalid(format!("ablation grid point {bad} outside (0, t_end)")));
    }
    let flags: &[bool] = if opts.both_preconditioning { &[true, false] } else { &[base.init_precondition] };
    let mut rows = Vec::new();
    for &precondition in flags {
        for &t0 in grid {
            let mut cfg = base.with_precondition(precondition);
            cfg.t0 = t0;
            if t0 < GAUSSIAN_INIT_THRESHOLD {
                cfg.init_steps = 0;
            }
            for &seed in seeds {
                let outcome = run_ssi(&cfg, target, seed).map_err(Error::from).and_then(|rec| {
                    let cloud = rec.cloud.expect("completed run has a cloud");
                    let m = mmd(&cloud, reference)?;
                    let w = w2(&cloud, reference, &opts.w2, seed)?;
                    Ok((m.mmd2, w.w2))
                });
                let row = match outcome {
                    Ok((m, w)) => AblationRow { t0, precondition, seed, mmd: m, w2: w, error: None },
                    Err(e) => {
                        log::warn!("ablation cell t0={t0} precondition={precondition} seed={seed} failed: {e}");
                        AblationRow { t0, precondition, seed, mmd: f64::NAN, w2: f64::NAN, error: Some(e.to_string()) }
                    }
                };
                log::info!("t0={t0:.2} precondition={precondition} seed={seed}: mmd={:.3e} w2={:.3}", row.mmd, row.w2);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Mean MMD and W2 over the seeds of each `(T0, preconditioning)` cell,
/// ignoring failed runs. Keeps first-appearance order.
pub fn aggregate_ablation(rows: &[AblationRow]) -> Vec<AblationAggregate> {
    let mut out: Vec<AblationAggregate> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for row in rows {
        let idx = match out.iter().position(|a| a.t0 == row.t0 && a.precondition == row.precondition) {
            Some(i) => i,
            None => {
                out.push(AblationAggregate {
                    t0: row.t0,
                    precondition: row.precondition,
                    mmd: f64::NAN,
                    w2: f64::NAN,
                    runs: 0,
                });
                sums.push((0.0, 0.0));
                out.len() - 1
            }
        };
        if row.error.is_none() {
            out[idx].runs += 1;
            sums[idx].0 += row.mmd;
            sums[idx].1 += row.w2;
        }
    }
    for (agg, (m, w)) in out.iter_mut().zip(sums) {
        if agg.runs > 0 {
            agg.mmd = m / agg.runs as f64;
            agg.w2 = w / agg.runs as f64;
        }
    }
    out
}
