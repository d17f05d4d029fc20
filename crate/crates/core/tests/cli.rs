use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SSI: &str = env!("CARGO_BIN_EXE_ssi");

const ULA_CONFIG: &str = r#"
seed = 4
[target]
name = "mog_grid"
size = 3
spacing = 4.0
[method]
kind = "ula"
step_size = 0.1
steps = 50
n_particles = 200
[metrics]
mode_radius = 1.2
w2_settings = { subsample = 100, repeats = 2 }
"#;

const SSI_CONFIG: &str = r#"
seed = 2
[target]
name = "gaussian"
dim = 2
[method]
kind = "ssi"
steps = 5
init_steps = 3
n_particles = 40
checkpoint_every = 2
[method.velocity]
chains = 4
retained = 5
[method.velocity.inner]
num_steps = 20
"#;

fn ssi(args: &[&str], root: &Path) -> Output {
    Command::new(SSI).args(args).env("SSI_OUTPUT_ROOT", root).output().expect("spawn ssi")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn sample_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "gauss.toml", SSI_CONFIG);
    let out = ssi(&["sample", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let run = tmp.path().join("gauss");
    for f in ["config.json", "samples.csv", "metadata.json", "metrics.json", "checkpoints/step_0002.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let samples = fs::read_to_string(run.join("samples.csv")).unwrap();
    assert!(samples.starts_with("x0,x1\n"));
    assert_eq!(samples.lines().count(), 41);
    assert!(!samples.contains('\r'));
    let meta: Value = serde_json::from_str(&fs::read_to_string(run.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["status"], "completed");
    assert_eq!(meta["seed"], 2);
}

#[test]
fn replay_from_echoed_config_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "gauss.toml", SSI_CONFIG);
    let first = tmp.path().join("a");
    let second = tmp.path().join("b");
    assert!(ssi(&["sample", &cfg, "--out", first.to_str().unwrap()], tmp.path()).status.success());
    let echo = first.join("config.json");
    let out = ssi(&["--workers", "2", "sample", echo.to_str().unwrap(), "--out", second.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(first.join("samples.csv")).unwrap(), fs::read(second.join("samples.csv")).unwrap());
}

#[test]
fn invalid_config_exits_with_validation_code_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = write(tmp.path(), "zero.toml", &ULA_CONFIG.replace("n_particles = 200", "n_particles = 0"));
    let out = ssi(&["sample", &zero], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("zero").exists());

    let unknown = write(tmp.path(), "unknown.toml", &format!("{ULA_CONFIG}\nbogus = 1\n"));
    assert_eq!(ssi(&["sample", &unknown], tmp.path()).status.code(), Some(2));

    let missing = tmp.path().join("nope.toml");
    assert_eq!(ssi(&["sample", missing.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}

#[test]
fn compare_orders_columns_lexically() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("suite");
    fs::create_dir(&suite).unwrap();
    write(&suite, "b_mala.toml", &ULA_CONFIG.replace("\"ula\"", "\"mala\""));
    write(&suite, "a_ula.toml", ULA_CONFIG);
    write(&suite, "notes.txt", "ignored");
    let out_dir = tmp.path().join("cmp");
    let out = ssi(&["compare", suite.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("metric,a_ula,b_mala"));
    let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["nll", "mmd", "w2", "modes_found"]);
    assert!(out_dir.join("a_ula/samples.csv").exists());
}

#[test]
fn compare_on_empty_directory_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(ssi(&["compare", empty.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}

#[test]
fn diag_prints_bifurcation_and_critical_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ssi(&["diag", "--m", "2"], tmp.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let t = v["bifurcation"]["t_star"].as_f64().unwrap();
    assert!((t - 0.3660).abs() < 1e-4);
    assert!((v["bifurcation"]["curvature_root"].as_f64().unwrap() - t).abs() < 1e-6);

    let out = ssi(&["diag", "--R", "0", "--sigma2", "0.5"], tmp.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["lsi"]["tight"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(v["t_star"].as_f64().unwrap(), 0.0);

    let out = ssi(&["diag", "--R", "2", "--sigma2", "1", "--t-grid", "0.2,0.5"], tmp.path());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (a, b) = (v["t_star"].as_f64().unwrap(), v["t_star_bisection"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-9);
    assert_eq!(v["beta_t"].as_array().unwrap().len(), 2);

    assert_eq!(ssi(&["diag", "--m", "1"], tmp.path()).status.code(), Some(2));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in walk(&dir) {
        ssi_core::config::ExperimentConfig::load(&entry)
            .and_then(|c| c.validate().map(|_| c))
            .unwrap_or_else(|e| panic!("{}: {e}", entry.display()));
        seen += 1;
    }
    assert!(seen > 0);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else if p.extension().is_some_and(|x| x == "toml") {
            out.push(p);
        }
    }
    out
}
