//! Experiment configuration files (TOML or JSON) and the method runner behind
//! the CLI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{MetricsConfig, W2Config};
use crate::cloud::ParticleCloud;
use crate::dynamics::{run_chain, ChainStats, HmcConfig, Kernel, LangevinConfig};
use crate::error::{Error, Result};
use crate::flow::{run_ssi, FlowConfig, RunRecord, SsiFailure};
use crate::rng::{substream, Purpose};
use crate::targets::{
    make_gaussian, make_gmm, make_many_well, make_mog40, make_mog_grid, make_rings, BayesPosteriorSpec,
    GaussianMixtureSpec, ManyWellSpec, RingsSpec, TargetDensity,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Gaussian {
        dim: usize,
        #[serde(default = "one")]
        variance: f64,
    },
    MogGrid {
        #[serde(default = "grid_size")]
        size: usize,
        #[serde(default = "grid_spacing")]
        spacing: f64,
        #[serde(default = "one")]
        variance: f64,
    },
    Mog40 {
        #[serde(default)]
        means_seed: u64,
    },
    Rings(RingsSpec),
    ManyWell(ManyWellSpec),
    BayesPosterior(BayesPosteriorSpec),
    Gmm(GaussianMixtureSpec),
}

fn one() -> f64 {
    1.0
}
fn grid_size() -> usize {
    7
}
fn grid_spacing() -> f64 {
    10.0
}

impl TargetConfig {
    pub fn build(&self) -> Result<Box<dyn TargetDensity>> {
        Ok(match self {
            TargetConfig::Gaussian { dim, variance } => Box::new(make_gaussian(*dim, *variance)?),
            TargetConfig::MogGrid { size, spacing, variance } => Box::new(make_mog_grid(*size, *spacing, *variance)?),
            TargetConfig::Mog40 { means_seed } => Box::new(make_mog40(*means_seed)?),
            TargetConfig::Rings(spec) => Box::new(make_rings(spec)?),
            TargetConfig::ManyWell(spec) => Box::new(make_many_well(spec)?),
            TargetConfig::BayesPosterior(spec) => Box::new(spec.build()?),
            TargetConfig::Gmm(spec) => Box::new(make_gmm(spec)?),
        })
    }

    /// Radius used to assign particles to mode centres.
    pub fn default_mode_radius(&self) -> Option<f64> {
        match self {
            TargetConfig::Gaussian { variance, .. } => Some(3.0 * variance.sqrt()),
            TargetConfig::MogGrid { spacing, .. } => Some(0.3 * spacing),
            TargetConfig::Mog40 { .. } => Some(3.0),
            TargetConfig::Rings(_) => None,
            TargetConfig::ManyWell(_) => Some(3.5),
            TargetConfig::BayesPosterior(_) => Some(1.0),
            TargetConfig::Gmm(spec) => {
                let max_var = match &spec.covariance {
                    crate::targets::Covariance::Isotropic(v) => *v,
                    crate::targets::Covariance::PerComponent(v) => v.iter().copied().fold(0.0, f64::max),
                    crate::targets::Covariance::Full(c) => {
                        c.iter().flat_map(|m| m.iter().enumerate().map(|(i, row)| row[i])).fold(0.0, f64::max)
                    }
                };
                Some(3.0 * max_var.sqrt())
            }
        }
    }
}

/// Settings shared by the Langevin baselines (ULA, MALA, pULA).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinBaseline {
    pub step_size: f64,
    pub steps: usize,
    pub n_particles: usize,
    /// Standard deviation of the Gaussian starting cloud.
    pub init_std: f64,
    /// RMSprop decay (pULA only).
    pub alpha: f64,
    /// RMSprop damping (pULA only).
    pub epsilon: f64,
    /// Start the RMSprop accumulator at the first squared score (pULA only).
    pub warm_accumulator: bool,
}

impl Default for LangevinBaseline {
    fn default() -> Self {
        let l = LangevinConfig::default();
        Self {
            step_size: 0.1,
            steps: 10_000,
            n_particles: 1000,
            init_std: 1.0,
            alpha: l.alpha,
            epsilon: l.epsilon,
            warm_accumulator: l.warm_accumulator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcBaseline {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub transitions: usize,
    pub n_particles: usize,
    pub init_std: f64,
}

impl Default for HmcBaseline {
    fn default() -> Self {
        Self { step_size: 1.0, leapfrog_steps: 100, transitions: 100, n_particles: 1000, init_std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodConfig {
    Ssi(FlowConfig),
    Ula(LangevinBaseline),
    Mala(LangevinBaseline),
    Pula(LangevinBaseline),
    Hmc(HmcBaseline),
}

impl MethodConfig {
    pub fn label(&self) -> &'static str {
        match self {
            MethodConfig::Ssi(_) => "ssi",
            MethodConfig::Ula(_) => "ula",
            MethodConfig::Mala(_) => "mala",
            MethodConfig::Pula(_) => "pula",
            MethodConfig::Hmc(_) => "hmc",
        }
    }

    pub fn n_particles(&self) -> usize {
        match self {
            MethodConfig::Ssi(c) => c.n_particles,
            MethodConfig::Ula(c) | MethodConfig::Mala(c) | MethodConfig::Pula(c) => c.n_particles,
            MethodConfig::Hmc(c) => c.n_particles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Ssi(c) => c.validate(),
            MethodConfig::Ula(c) | MethodConfig::Mala(c) | MethodConfig::Pula(c) => {
                if c.n_particles == 0 {
                    return Err(Error::invalid("n_particles must be at least 1"));
                }
                if !(c.init_std > 0.0) {
                    return Err(Error::invalid("init_std must be positive"));
                }
                self.kernel().expect("langevin baseline has a kernel").validate()
            }
            MethodConfig::Hmc(c) => {
                if c.n_particles == 0 {
                    return Err(Error::invalid("n_particles must be at least 1"));
                }
                if !(c.init_std > 0.0) {
                    return Err(Error::invalid("init_std must be positive"));
                }
                self.kernel().expect("hmc has a kernel").validate()
            }
        }
    }

    /// Markov kernel of a baseline; `None` for the flow sampler.
    pub fn kernel(&self) -> Option<Kernel> {
        match self {
            MethodConfig::Ssi(_) => None,
            MethodConfig::Ula(c) => Some(Kernel::Ula { step_size: c.step_size }),
            MethodConfig::Mala(c) => Some(Kernel::Mala { step_size: c.step_size }),
            MethodConfig::Pula(c) => Some(Kernel::Pula(LangevinConfig {
                step_size: c.step_size,
                num_steps: c.steps,
                precondition: true,
                alpha: c.alpha,
                epsilon: c.epsilon,
                warm_accumulator: c.warm_accumulator,
            })),
            MethodConfig::Hmc(c) => Some(Kernel::Hmc(HmcConfig {
                step_size: c.step_size,
                leapfrog_steps: c.leapfrog_steps,
                num_transitions: c.transitions,
            })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory; relative paths resolve against the output root.
    pub dir: Option<PathBuf>,
    /// Write the cloud every this many flow steps.
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub both_preconditioning: bool,
    pub w2: W2Config,
    /// Size of the exact-sampler reference cloud.
    pub reference_size: Option<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            grid: vec![0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            seeds: vec![0, 1, 2],
            both_preconditioning: true,
            w2: W2Config::default(),
            reference_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub target: TargetConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub ablation: Option<AblationSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        self.target.build()?;
        if self.output.checkpoint_every == Some(0) {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        if let Some(a) = &self.ablation {
            if a.grid.is_empty() || a.seeds.is_empty() {
                return Err(Error::invalid("ablation needs a non-empty grid and seed list"));
            }
            if !matches!(self.method, MethodConfig::Ssi(_)) {
                return Err(Error::invalid("ablation applies to the ssi method only"));
            }
        }
        let w2 = &self.metrics.w2_settings;
        if w2.subsample == 0 || w2.repeats == 0 {
            return Err(Error::invalid("w2 subsample and repeats must be positive"));
        }
        Ok(())
    }

    /// Flow settings with the output checkpoint cadence applied.
    pub fn flow_config(&self) -> Option<FlowConfig> {
        match &self.method {
            MethodConfig::Ssi(c) => {
                let mut c = *c;
                if self.output.checkpoint_every.is_some() {
                    c.checkpoint_every = self.output.checkpoint_every;
                }
                Some(c)
            }
            _ => None,
        }
    }
}

/// Result of running one configured method.
#[derive(Debug)]
pub struct MethodOutput {
    pub cloud: ParticleCloud,
    pub seconds: f64,
    pub record: Option<RunRecord>,
    pub stats: Option<ChainStats>,
}

/// A failed method run with whatever was produced before the failure.
#[derive(Debug)]
pub struct MethodFailure {
    pub error: Error,
    pub partial: Option<Box<RunRecord>>,
}

impl From<Error> for MethodFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

impl From<SsiFailure> for MethodFailure {
    fn from(f: SsiFailure) -> Self {
        Self { error: f.error, partial: Some(f.partial) }
    }
}

/// Gaussian starting cloud `N(0, s^2 I)` for the baselines.
pub fn baseline_start(n: usize, d: usize, std: f64, seed: u64) -> ParticleCloud {
    let mut cloud = crate::flow::gaussian_cloud(n, d, seed);
    cloud.positions_mut().mapv_inplace(|v| v * std);
    cloud
}

/// Runs the configured sampler on `target`.
pub fn run_method(
    cfg: &ExperimentConfig,
    target: &dyn TargetDensity,
) -> std::result::Result<MethodOutput, MethodFailure> {
    let start = Instant::now();
    let seed = cfg.seed;
    if let Some(flow) = cfg.flow_config() {
        let record = run_ssi(&flow, target, seed)?;
        let cloud = record.cloud.clone().expect("completed run has a cloud");
        return Ok(MethodOutput { cloud, seconds: start.elapsed().as_secs_f64(), record: Some(record), stats: None });
    }
    let (n, std, steps) = match &cfg.method {
        MethodConfig::Ula(c) | MethodConfig::Mala(c) | MethodConfig::Pula(c) => (c.n_particles, c.init_std, c.steps),
        MethodConfig::Hmc(c) => (c.n_particles, c.init_std, c.transitions),
        MethodConfig::Ssi(_) => unreachable!("handled above"),
    };
    let kernel = cfg.method.kernel().expect("baselines have kernels");
    let x0 = baseline_start(n, target.dim(), std, seed);
    let run = run_chain(&x0, target, &kernel, steps, seed)?;
    Ok(MethodOutput { cloud: run.cloud, seconds: start.elapsed().as_secs_f64(), record: None, stats: Some(run.stats) })
}

/// Exact draws from the target used as metric reference.
pub fn reference_cloud(target: &dyn TargetDensity, n: usize, seed: u64) -> Option<ParticleCloud> {
    let mut rng = substream(seed, Purpose::ExactSample, 0, 0);
    target.sample(&mut rng, n)
}
