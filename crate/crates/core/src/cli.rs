//! The `ssi` command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    beta_t, bisect, compute_metrics, critical_time_t_star, gmm_bifurcation_time, lsi_bound, ConvolutionSpec,
    MetricsReport,
};
use crate::cloud::ParticleCloud;
use crate::config::{reference_cloud, run_method, ExperimentConfig, MethodOutput};
use crate::error::{Error, Result};
use crate::flow::{ablate_t0, aggregate_ablation, AblationConfig};
use crate::interpolant::symmetric_pair_interpolant_density;
use crate::targets::TargetDensity;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SSI_OUTPUT_ROOT";

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ssi", version, about = "Sampling with stochastic interpolants and Langevin-estimated velocities")]
pub struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    pub output_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configured sampler and write samples, metadata and metrics.
    Sample {
        /// Experiment config (TOML, or JSON by extension).
        config: PathBuf,
        /// Run directory, overriding the config and output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every config in a directory on a shared target and tabulate metrics.
    Compare {
        /// Directory of configs; columns follow the lexical order of file names.
        dir: PathBuf,
        /// Output directory for per-method runs and compare.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the initialization time of the flow sampler.
    Ablate {
        /// Experiment config with an [ablation] section.
        config: PathBuf,
        /// Output directory for the long and aggregate CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print closed-form diagnostics as JSON.
    Diag {
        /// Support radius R.
        #[arg(long = "R", visible_alias = "r")]
        r: Option<f64>,
        /// Variance of the Gaussian convolution factor.
        #[arg(long)]
        sigma2: Option<f64>,
        /// Half-distance of the symmetric two-mode mixture.
        #[arg(long)]
        m: Option<f64>,
        /// Comma-separated times for the beta_t table.
        #[arg(long, value_delimiter = ',')]
        t_grid: Vec<f64>,
    },
}

enum Failure {
    Validation(Error),
    Runtime(Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
    fn error(&self) -> &Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

fn validation(e: Error) -> Failure {
    Failure::Validation(e)
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return EXIT_VALIDATION;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not resize worker pool: {e}");
        }
    }
    let root = cli.output_root.clone();
    let outcome = match cli.command {
        Command::Sample { config, out } => cmd_sample(&config, out, &root),
        Command::Compare { dir, out } => cmd_compare(&dir, out, &root),
        Command::Ablate { config, out } => cmd_ablate(&config, out, &root),
        Command::Diag { r, sigma2, m, t_grid } => cmd_diag(r, sigma2, m, &t_grid),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error());
            f.code()
        }
    }
}

fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(validation)
}

fn run_dir(cfg: &ExperimentConfig, config_path: &Path, out: Option<PathBuf>, root: &Path) -> PathBuf {
    if let Some(out) = out {
        return out;
    }
    match &cfg.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => root.join(d),
        None => root.join(config_path.file_stem().unwrap_or_else(|| "run".as_ref())),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_cloud(path: &Path, cloud: &ParticleCloud) -> Result<()> {
    cloud.write_csv(fs::File::create(path)?)
}

fn evaluate(
    cfg: &ExperimentConfig,
    target: &dyn TargetDensity,
    cloud: &ParticleCloud,
    reference: Option<&ParticleCloud>,
) -> Result<MetricsReport> {
    compute_metrics(cloud, target, reference, cfg.target.default_mode_radius(), &cfg.metrics, cfg.seed)
}

fn build_reference(cfg: &ExperimentConfig, target: &dyn TargetDensity) -> Option<ParticleCloud> {
    if !(cfg.metrics.mmd || cfg.metrics.w2) {
        return None;
    }
    let n = cfg.metrics.reference_size.unwrap_or_else(|| cfg.method.n_particles());
    reference_cloud(target, n, cfg.seed)
}

/// Writes the artifacts of one run into `dir`; returns the metrics on success.
fn execute(
    cfg: &ExperimentConfig,
    target: &dyn TargetDensity,
    dir: &Path,
    reference: Option<&ParticleCloud>,
) -> std::result::Result<(MethodOutput, MetricsReport), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(e.into()))?;
    write_json(&dir.join("config.json"), cfg).map_err(runtime)?;
    log::info!("running {} on {} ({} particles)", cfg.method.label(), target.name(), cfg.method.n_particles());
    let output = match run_method(cfg, target) {
        Ok(o) => o,
        Err(f) => {
            let mut meta = json!({
                "status": "failed",
                "error": f.error.to_string(),
                "target": target.name(),
                "method": cfg.method.label(),
                "seed": cfg.seed,
            });
            if let Some(partial) = &f.partial {
                meta["run"] = serde_json::to_value(partial).unwrap_or_default();
                if let Some(cloud) = partial.cloud() {
                    let _ = write_cloud(&dir.join("samples_partial.csv"), cloud);
                }
                write_checkpoints(dir, partial).ok();
            }
            let _ = write_json(&dir.join("metadata.json"), &meta);
            return Err(runtime(f.error));
        }
    };
    write_cloud(&dir.join("samples.csv"), &output.cloud).map_err(runtime)?;
    if let Some(record) = &output.record {
        write_checkpoints(dir, record).map_err(runtime)?;
    }
    let meta = json!({
        "status": "completed",
        "target": target.name(),
        "method": cfg.method.label(),
        "seed": cfg.seed,
        "seconds": output.seconds,
        "n_particles": output.cloud.len(),
        "dim": output.cloud.dim(),
        "run": output.record,
        "chain_stats": output.stats,
        "acceptance_rate": output.stats.map(|s| s.acceptance_rate()),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&dir.join("metadata.json"), &meta).map_err(runtime)?;
    let metrics = evaluate(cfg, target, &output.cloud, reference).map_err(runtime)?;
    write_json(&dir.join("metrics.json"), &metrics).map_err(runtime)?;
    Ok((output, metrics))
}

fn write_checkpoints(dir: &Path, record: &crate::flow::RunRecord) -> Result<()> {
    if record.checkpoints.is_empty() {
        return Ok(());
    }
    let sub = dir.join("checkpoints");
    fs::create_dir_all(&sub)?;
    for c in &record.checkpoints {
        if let Some(cloud) = &c.cloud {
            write_cloud(&sub.join(format!("step_{:04}.csv", c.step)), cloud)?;
        }
    }
    Ok(())
}

fn cmd_sample(config: &Path, out: Option<PathBuf>, root: &Path) -> std::result::Result<(), Failure> {
    let cfg = load_config(config)?;
    let target = cfg.target.build().map_err(validation)?;
    let dir = run_dir(&cfg, config, out, root);
    let reference = build_reference(&cfg, target.as_ref());
    let (_, metrics) = execute(&cfg, target.as_ref(), &dir, reference.as_ref())?;
    log::info!("wrote {}", dir.display());
    if let Some(m) = &metrics.modes {
        log::info!("modes found: {}/{}", m.modes_found, m.counts.len());
    }
    Ok(())
}

/// Config files (`.toml`, `.json`) in `dir`, in lexical order.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("toml") || e.eq_ignore_ascii_case("json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_compare(dir: &Path, out: Option<PathBuf>, root: &Path) -> std::result::Result<(), Failure> {
    let files = config_files(dir).map_err(validation)?;
    if files.is_empty() {
        return Err(validation(Error::invalid(format!("no configs found in {}", dir.display()))));
    }
    let configs = files.iter().map(|f| load_config(f)).collect::<std::result::Result<Vec<_>, _>>()?;
    let first = &configs[0];
    if let Some(other) = configs.iter().position(|c| c.target != first.target) {
        return Err(validation(Error::invalid(format!(
            "{} uses a different target than {}",
            files[other].display(),
            files[0].display()
        ))));
    }
    let target = first.target.build().map_err(validation)?;
    let out_dir = out.unwrap_or_else(|| root.join(dir.file_name().unwrap_or_else(|| "compare".as_ref())));
    let ref_size =
        configs.iter().map(|c| c.metrics.reference_size.unwrap_or_else(|| c.method.n_particles())).max().unwrap_or(1);
    let reference = reference_cloud(target.as_ref(), ref_size, first.seed);

    let mut columns = Vec::new();
    let mut failed = false;
    for (file, cfg) in files.iter().zip(&configs) {
        let name = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let result = execute(cfg, target.as_ref(), &out_dir.join(&name), reference.as_ref());
        let metrics = match result {
            Ok((_, m)) => Some(m),
            Err(f) => {
                log::error!("{name} failed: {}", f.error());
                failed = true;
                None
            }
        };
        columns.push((name, metrics));
    }
    write_compare_table(&out_dir.join("compare.csv"), &columns).map_err(runtime)?;
    log::info!("wrote {}", out_dir.join("compare.csv").display());
    if failed {
        return Err(runtime(Error::invalid("at least one method failed; see NaN cells")));
    }
    Ok(())
}

/// Rows are metrics, columns are methods in the given order.
pub fn write_compare_table(path: &Path, columns: &[(String, Option<MetricsReport>)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    type Getter = fn(&MetricsReport) -> Option<f64>;
    let rows: [(&str, Getter); 4] = [
        ("nll", |m| m.nll.map(|n| n.nll)),
        ("mmd", |m| m.mmd.map(|x| x.mmd2_clamped)),
        ("w2", |m| m.w2.as_ref().map(|x| x.w2)),
        ("modes_found", |m| m.modes.as_ref().map(|x| x.modes_found as f64)),
    ];
    for (label, get) in rows {
        let mut record = vec![label.to_string()];
        for (_, m) in columns {
            let v = m.as_ref().and_then(get).unwrap_or(f64::NAN);
            record.push(format!("{v}"));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ablate(config: &Path, out: Option<PathBuf>, root: &Path) -> std::result::Result<(), Failure> {
    let cfg = load_config(config)?;
    let section = cfg.ablation.clone().ok_or_else(|| validation(Error::invalid("config has no [ablation] section")))?;
    let flow = cfg.flow_config().expect("validated: ablation requires ssi");
    let target = cfg.target.build().map_err(validation)?;
    let dir = run_dir(&cfg, config, out, root);
    fs::create_dir_all(&dir).map_err(|e| runtime(e.into()))?;
    write_json(&dir.join("config.json"), &cfg).map_err(runtime)?;
    let n_ref = section.reference_size.unwrap_or(flow.n_particles);
    let reference = reference_cloud(target.as_ref(), n_ref, cfg.seed).ok_or_else(|| {
        validation(Error::invalid(format!("target {} has no exact sampler for the reference cloud", target.name())))
    })?;
    let opts = AblationConfig { w2: section.w2, both_preconditioning: section.both_preconditioning };
    let rows =
        ablate_t0(&section.grid, &flow, target.as_ref(), &section.seeds, &reference, &opts).map_err(validation)?;
    let aggregate = aggregate_ablation(&rows);
    write_rows(&dir.join("ablation_long.csv"), &rows).map_err(runtime)?;
    write_rows(&dir.join("ablation_aggregate.csv"), &aggregate).map_err(runtime)?;
    log::info!("wrote {}", dir.display());
    if rows.iter().any(|r| r.error.is_some()) {
        return Err(runtime(Error::invalid("some ablation cells failed; see ablation_long.csv")));
    }
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Second derivative at the origin of the symmetric-pair interpolant density,
/// by central differences.
fn origin_curvature(m: f64, t: f64) -> f64 {
    let h = 1e-3;
    (symmetric_pair_interpolant_density(m, t, h) - 2.0 * symmetric_pair_interpolant_density(m, t, 0.0)
        + symmetric_pair_interpolant_density(m, t, -h))
        / (h * h)
}

/// Closed-form diagnostics as a JSON value.
pub fn diagnostics(r: Option<f64>, sigma2: Option<f64>, m: Option<f64>, t_grid: &[f64]) -> Result<serde_json::Value> {
    let grid: Vec<f64> = if t_grid.is_empty() { (1..10).map(|k| k as f64 / 10.0).collect() } else { t_grid.to_vec() };
    let mut out = json!({ "inputs": { "R": r, "sigma2": sigma2, "m": m, "t_grid": grid } });
    if let (Some(r), Some(s2)) = (r, sigma2) {
        let spec = ConvolutionSpec::new(r, s2)?;
        let table = grid
            .iter()
            .map(|&t| beta_t(&spec, t).map(|b| json!({ "t": t, "beta_t": b })))
            .collect::<Result<Vec<_>>>()?;
        let t_star = critical_time_t_star(&spec);
        let root = if t_star > 0.0 {
            Some(bisect(|t| beta_t(&spec, t).unwrap_or(f64::NAN), 1e-12, 1.0 - 1e-12, 1e-14)?)
        } else {
            None
        };
        out["beta_t"] = json!(table);
        out["t_star"] = json!(t_star);
        out["t_star_bisection"] = json!(root);
        out["lsi"] = match lsi_bound(r, s2) {
            Ok(b) => json!(b),
            Err(e) => json!({ "error": e.to_string() }),
        };
    } else if r.is_some() || sigma2.is_some() {
        return Err(Error::Domain("--R and --sigma2 must be given together".into()));
    }
    if let Some(m) = m {
        let t_star = gmm_bifurcation_time(m)?;
        let root = bisect(|t| origin_curvature(m, t), 1e-9, 1.0 - 1e-9, 1e-13)?;
        out["bifurcation"] = json!({ "m": m, "t_star": t_star, "curvature_root": root });
    }
    Ok(out)
}

fn cmd_diag(r: Option<f64>, sigma2: Option<f64>, m: Option<f64>, t_grid: &[f64]) -> std::result::Result<(), Failure> {
    let value = diagnostics(r, sigma2, m, t_grid).map_err(validation)?;
    println!("{}", serde_json::to_string_pretty(&value).map_err(|e| runtime(e.into()))?);
    Ok(())
}
