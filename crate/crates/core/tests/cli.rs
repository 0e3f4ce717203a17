//! End-to-end runs of the `gcgmt` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gcgmt::harness::ExperimentConfig;

fn gcgmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcgmt")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_owned()
}

const SMALL_REGRESSION: &str = r#"
experiment = "regression_sweep"
lambda_grid = [0.1, 1.0]
trials = 3

[regression]
n = 30
d = [20]
"#;

const SMALL_CLASSIFICATION: &str = r#"
experiment = "classification_sweep"
lambda_grid = [1.0, 100.0]
trials = 2

[classification]
n = 40
d = 60
"#;

#[test]
fn regression_sweep_writes_both_tables_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_REGRESSION);
    let out = dir.path().join("out");
    let o = gcgmt(&["--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["lamvary_n30_d20_k3_theory.csv", "lamvary_n30_d20_k3_exp.csv"] {
        let p = out.join(f);
        assert_eq!(header(&p), "lam,train,trainstd,gen,genstd");
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
        assert!(String::from_utf8_lossy(&o.stdout).contains(f));
    }
}

#[test]
fn classification_sweep_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CLASSIFICATION);
    let out = dir.path().join("out");
    let o = gcgmt(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let p = out.join("binary_d60_n40.csv");
    assert_eq!(header(&p), "lam,PO,POR1,AO");
    for line in fs::read_to_string(&p).unwrap().lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1..].iter().all(|&e| (0.0..=0.5).contains(&e)), "{line}");
    }
}

#[test]
fn reruns_are_bit_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_REGRESSION);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = gcgmt(&["--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        fs::read(out.join("lamvary_n30_d20_k3_exp.csv")).unwrap()
    };
    let a = run("a", "11");
    assert_eq!(a, run("b", "11"));
    assert_ne!(a, run("c", "12"));
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_REGRESSION);
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = gcgmt(&["--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(o.status.code(), Some(0));
        fs::read(out.join("lamvary_n30_d20_k3_exp.csv")).unwrap()
    };
    assert_eq!(run("one", "1"), run("two", "2"));
}

#[test]
fn checks_with_few_trials_warn_and_fault_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
experiment = "checks"
[checks]
gap_tuples = 500
t_points = 5
pilot_trials = 200
lipschitz_pairs = 50
concentration_trials = 200
net_points = 20
fault = "gap_sign_flip"
"#,
    );
    let out = dir.path().join("out");
    let o = gcgmt(&["--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "10"]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("insufficient statistical power"), "{stderr}");
    assert!(stderr.contains("FAIL covariance_gap"), "{stderr}");
    assert_eq!(header(&out.join("checks_mc_0.csv")), "t,p_phi_hat,p_phi_stderr,p_ao_scaled,p_ao_stderr,violation_sigma");
    assert_eq!(header(&out.join("checks_concentration_0.csv")), "epsilon,frequency,stderr,bound");
    assert!(out.join("checks_summary.csv").exists());
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gcgmt(&[]).status.code(), Some(1));
    assert_eq!(gcgmt(&["--experiment", "nonsense"]).status.code(), Some(1));
    assert_eq!(gcgmt(&["--bogus-flag"]).status.code(), Some(1));
    let cfg = write_config(dir.path(), "experiment = \"checks\"\nunknown_key = 3\n");
    assert_eq!(gcgmt(&["--config", &cfg]).status.code(), Some(1));
    assert_eq!(gcgmt(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert_eq!(seen, 4);
}
