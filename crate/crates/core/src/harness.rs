//! Batch experiment runner: regression and classification λ sweeps and the
//! comparison-check suites, configured from a TOML file and writing CSV.
//!
//! Output files (all comma-separated with a header row):
//!
//! * regression sweep, one pair per `d`:
//!   `lamvary_n{n}_d{d}_k{k}_theory.csv` and `..._exp.csv` with columns
//!   `lam,train,trainstd,gen,genstd`. Theory rows carry zero std; experiment
//!   rows carry the sample standard deviation over trials (not the stderr).
//! * classification sweep: `binary_d{d}_n{n}.csv` with columns `lam,PO,POR1,AO`:
//!   `POR1` is the direct solve on the spiked mixture averaged over dataset seeds,
//!   `PO` the prediction for the isotropic (`σ = 0`) mixture and `AO` the
//!   prediction for the spiked mixture.
//! * checks: `checks_gap.csv`, `checks_mc_{i}.csv`
//!   (`t,p_phi_hat,p_phi_stderr,p_ao_scaled,p_ao_stderr,violation_sigma`),
//!   `checks_lipschitz.csv`, `checks_concentration_{i}.csv`
//!   (`epsilon,frequency,stderr,bound`) and `checks_summary.csv`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao_classification::{solve_ao_class, AoClassSolveConfig, ClassAoSpec};
use crate::ao_regression::{solve_ao_regression, AoRegressionProblem, AoSolveConfig};
use crate::checks::{
    concentration_check, gap_sweep, lipschitz_check, mc_gcgmt_inequality, pilot_t_grid, CompactInstance, EpsilonGrid,
    Fault, MinMaxInstance, RandomInstance,
};
use crate::covariance::{self, CovarianceKind, CovarianceSpec, PsdMatrix};
use crate::data::{gen_correlated_means, gen_gmm, gen_regression};
use crate::error::{Error, Result};
use crate::po::{classification_error, closed_form_gen_error, solve_gmm_classifier, solve_ridge_multisource};
use crate::rng;

/// Check runs with fewer Monte-Carlo trials than this get a low-power warning.
pub const LOW_POWER_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RegressionSweep,
    ClassificationSweep,
    Checks,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RegressionSweep => "regression_sweep",
            ExperimentKind::ClassificationSweep => "classification_sweep",
            ExperimentKind::Checks => "checks",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            ExperimentKind::RegressionSweep => 20,
            ExperimentKind::ClassificationSweep => 10,
            ExperimentKind::Checks => 100_000,
        }
    }

    fn default_lambda_grid(self) -> Vec<f64> {
        match self {
            ExperimentKind::ClassificationSweep => vec![1.0, 10.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2000.0, 5000.0],
            _ => log_grid(1e-2, 1e2, 15),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression_sweep" => Ok(Self::RegressionSweep),
            "classification_sweep" => Ok(Self::ClassificationSweep),
            "checks" => Ok(Self::Checks),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?} (expected regression_sweep, classification_sweep or checks)"
            ))),
        }
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points).map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaStar {
    /// Only `"ones"` is recognized.
    Named(String),
    Explicit(Vec<f64>),
}

impl ThetaStar {
    pub fn build(&self, d: usize) -> Result<DVector<f64>> {
        match self {
            ThetaStar::Named(s) if s == "ones" => Ok(DVector::from_element(d, 1.0)),
            ThetaStar::Named(s) => Err(Error::Config(format!("unknown theta_star {s:?} (expected \"ones\" or a list)"))),
            ThetaStar::Explicit(v) if v.len() == d => Ok(DVector::from_column_slice(v)),
            ThetaStar::Explicit(v) => Err(Error::Config(format!("theta_star has {} entries but d = {d}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub n: usize,
    /// One sweep per dimension.
    pub d: Vec<usize>,
    /// One covariance per source; the dimension is taken from `d`.
    pub cov_specs: Vec<CovarianceKind>,
    pub noise_sigmas: Vec<f64>,
    pub theta_star: ThetaStar,
    /// Independent starts of the saddle search.
    pub ao_starts: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        let spiked = |s: f64| CovarianceKind::Spiked {
            sigma_base: s,
            spike_sigma: Some(1.0),
            spike: None,
        };
        Self {
            n: 100,
            d: vec![50, 100, 150],
            cov_specs: vec![spiked(0.5), spiked(0.7), spiked(0.3)],
            noise_sigmas: vec![0.1, 0.2, 0.3],
            theta_star: ThetaStar::Named("ones".into()),
            ao_starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub n: usize,
    pub d: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Spike scale: `Σ_i = σ_i² I + ν_iν_iᵀ` with `ν_i ~ N(0, σ² I)`.
    pub sigma: f64,
    pub r: f64,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: 700,
            sigma1: 3.0,
            sigma2: 3.0,
            sigma: 10.0,
            r: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    pub gap_tuples: usize,
    pub t_points: usize,
    pub pilot_trials: usize,
    pub lipschitz_pairs: usize,
    pub concentration_trials: usize,
    /// Multiples of the sample standard deviation.
    pub epsilon_multiples: Vec<f64>,
    pub net_points: usize,
    /// Deliberate defect used to confirm that violations are reported.
    pub fault: Fault,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            gap_tuples: 10_000,
            t_points: 21,
            pilot_trials: 5000,
            lipschitz_pairs: 1000,
            concentration_trials: 10_000,
            epsilon_multiples: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
            net_points: 1000,
            fault: Fault::None,
        }
    }
}

/// Raw configuration as read from TOML; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default)]
    pub classification: ClassificationConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn default_seed() -> u64 {
    rng::DEFAULT_SEED
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            lambda_grid: None,
            trials: None,
            master_seed: default_seed(),
            output_dir: default_output(),
            jobs: None,
            regression: RegressionConfig::default(),
            classification: ClassificationConfig::default(),
            checks: ChecksConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(e) = o.experiment {
            self.experiment = e;
        }
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
        if o.trials.is_some() {
            self.trials = o.trials;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(|| self.experiment.default_lambda_grid())
    }

    pub fn trial_count(&self) -> usize {
        self.trials.unwrap_or_else(|| self.experiment.default_trials())
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.lambdas();
        if grid.is_empty() {
            return Err(Error::config("lambda_grid must be non-empty"));
        }
        if let Some(l) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda_grid entries must be positive, got {l}")));
        }
        if self.trial_count() == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(Error::config("jobs must be at least 1"));
        }
        match self.experiment {
            ExperimentKind::RegressionSweep => {
                let r = &self.regression;
                if r.d.is_empty() || r.n == 0 || r.d.contains(&0) {
                    return Err(Error::config("regression needs n >= 1 and a non-empty list of positive d"));
                }
                if r.cov_specs.is_empty() || r.cov_specs.len() != r.noise_sigmas.len() {
                    return Err(Error::config("regression needs one noise level per covariance spec"));
                }
                for &d in &r.d {
                    r.theta_star.build(d)?;
                    for kind in &r.cov_specs {
                        CovarianceSpec { kind: kind.clone(), dim: d }.validate()?;
                    }
                }
            }
            ExperimentKind::ClassificationSweep => {
                let c = &self.classification;
                if c.n == 0 || !c.n.is_multiple_of(2) || c.d < 3 {
                    return Err(Error::config("classification needs an even n and d >= 3"));
                }
                if !(c.r.abs() <= 1.0) || [c.sigma1, c.sigma2, c.sigma].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(Error::config("classification needs |r| <= 1 and non-negative sigmas"));
                }
            }
            ExperimentKind::Checks => {
                let c = &self.checks;
                if c.t_points == 0 || c.epsilon_multiples.is_empty() || c.concentration_trials < 2 {
                    return Err(Error::config("checks need t points, epsilon values and at least two concentration trials"));
                }
            }
        }
        Ok(())
    }

    /// `hash(master_seed, experiment, λ index, trial index)`; `extra` separates sub-sweeps.
    pub fn trial_seed(&self, extra: &[u64], lambda_index: usize, trial: usize) -> u64 {
        let mut idx = extra.to_vec();
        idx.extend([lambda_index as u64, trial as u64]);
        rng::derive_u64(self.master_seed, self.experiment.name(), &idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Violation,
    SolverFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Violation => 2,
            Outcome::SolverFailure => 3,
        }
    }

    fn worst(self, other: Outcome) -> Outcome {
        let rank = |o: Outcome| match o {
            Outcome::Success => 0,
            Outcome::Violation => 1,
            Outcome::SolverFailure => 2,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
    /// Human-readable lines: warnings, flagged rows, check verdicts.
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub lam: f64,
    pub train_theory: f64,
    pub gen_theory: f64,
    pub train_emp: f64,
    pub train_std: f64,
    pub gen_emp: f64,
    pub gen_std: f64,
    /// Whether the saddle search converged to a stationary point.
    pub ao_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSweep {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub rows: Vec<RegressionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationRow {
    pub lam: f64,
    pub ao_error: f64,
    pub po_error: f64,
    /// Standard error of `po_error` over dataset seeds.
    pub po_stderr: f64,
    pub po_error_isotropic: f64,
    pub ao_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSweep {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub rows: Vec<ClassificationRow>,
}

#[derive(Serialize)]
struct ErrorCsvRow {
    lam: f64,
    train: f64,
    trainstd: f64,
    gen: f64,
    genstd: f64,
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct ClassCsvRow {
    lam: f64,
    PO: f64,
    POR1: f64,
    AO: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

impl RegressionSweep {
    pub fn theory_file(&self) -> String {
        format!("lamvary_n{}_d{}_k{}_theory.csv", self.n, self.d, self.k)
    }

    pub fn exp_file(&self) -> String {
        format!("lamvary_n{}_d{}_k{}_exp.csv", self.n, self.d, self.k)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let theory = dir.join(self.theory_file());
        let exp = dir.join(self.exp_file());
        write_rows(
            &theory,
            self.rows.iter().map(|r| ErrorCsvRow {
                lam: r.lam,
                train: r.train_theory,
                trainstd: 0.0,
                gen: r.gen_theory,
                genstd: 0.0,
            }),
        )?;
        write_rows(
            &exp,
            self.rows.iter().map(|r| ErrorCsvRow {
                lam: r.lam,
                train: r.train_emp,
                trainstd: r.train_std,
                gen: r.gen_emp,
                genstd: r.gen_std,
            }),
        )?;
        Ok(vec![theory, exp])
    }
}

impl ClassificationSweep {
    pub fn file(&self) -> String {
        format!("binary_d{}_n{}.csv", self.d, self.n)
    }

    pub fn write_csv(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file());
        write_rows(
            &path,
            self.rows.iter().map(|r| ClassCsvRow {
                lam: r.lam,
                PO: r.po_error_isotropic,
                POR1: r.po_error,
                AO: r.ao_error,
            }),
        )?;
        Ok(path)
    }
}

/// Covariances of the regression sweep at dimension `d`; sampled spikes are
/// drawn once per `(master_seed, d, source)` and shared by all trials.
pub fn regression_covariances(cfg: &ExperimentConfig, d: usize) -> Result<Vec<PsdMatrix>> {
    cfg.regression
        .cov_specs
        .iter()
        .enumerate()
        .map(|(l, kind)| {
            let spec = CovarianceSpec { kind: kind.clone(), dim: d };
            covariance::build(&spec, Some(rng::derive_u64(cfg.master_seed, "regression_sweep.covariance", &[d as u64, l as u64])))
        })
        .collect()
}

/// For each `d` and `λ`: one AO solve (theory) and `trials` fresh ridge fits (experiment).
pub fn run_regression_sweep(cfg: &ExperimentConfig) -> Result<Vec<RegressionSweep>> {
    if cfg.experiment != ExperimentKind::RegressionSweep {
        return Err(Error::config("run_regression_sweep needs experiment = regression_sweep"));
    }
    let rc = &cfg.regression;
    let lambdas = cfg.lambdas();
    let trials = cfg.trial_count();
    rc.d.iter()
        .map(|&d| {
            let covs = regression_covariances(cfg, d)?;
            let theta = rc.theta_star.build(d)?;
            let problem = AoRegressionProblem::new(rc.n, covs.clone(), rc.noise_sigmas.clone(), theta.clone(), lambdas[0])?;
            let ao_cfg = AoSolveConfig {
                starts: rc.ao_starts.max(1),
                seed: rng::derive_u64(cfg.master_seed, "regression_sweep.ao", &[d as u64]),
                ..Default::default()
            };
            let theory = lambdas
                .par_iter()
                .map(|&lam| -> Result<(f64, f64, bool)> {
                    match solve_ao_regression(&problem.with_lambda(lam)?, &ao_cfg) {
                        Ok(sol) => Ok((
                            sol.predicted_train_error,
                            sol.predicted_gen_error,
                            sol.converged && sol.is_saddle(ao_cfg.slack),
                        )),
                        Err(Error::Solver(_)) => Ok((f64::NAN, f64::NAN, false)),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let jobs: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
            let fits = jobs
                .par_iter()
                .map(|&(i, t)| -> Result<(f64, f64)> {
                    let seed = cfg.trial_seed(&[d as u64], i, t);
                    let ds = gen_regression(rc.n, &covs, &rc.noise_sigmas, &theta, seed)?;
                    let fit = solve_ridge_multisource(&ds, lambdas[i])?;
                    let gen = closed_form_gen_error(&fit.theta_hat, &theta, &covs, &rc.noise_sigmas)?;
                    Ok((fit.training_error, gen))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = lambdas
                .iter()
                .enumerate()
                .map(|(i, &lam)| {
                    let chunk = &fits[i * trials..(i + 1) * trials];
                    let (train_emp, train_std) = mean_std(&chunk.iter().map(|f| f.0).collect::<Vec<_>>());
                    let (gen_emp, gen_std) = mean_std(&chunk.iter().map(|f| f.1).collect::<Vec<_>>());
                    let (train_theory, gen_theory, ao_converged) = theory[i];
                    RegressionRow {
                        lam,
                        train_theory,
                        gen_theory,
                        train_emp,
                        train_std,
                        gen_emp,
                        gen_std,
                        ao_converged,
                    }
                })
                .collect();
            Ok(RegressionSweep {
                n: rc.n,
                d,
                k: rc.cov_specs.len(),
                trials,
                rows,
            })
        })
        .collect()
}

/// Direct error of the ridge classifier on one freshly drawn spiked mixture
/// (fresh means, spikes and samples per seed).
pub fn classification_po_trial(c: &ClassificationConfig, lambda: f64, seed: u64) -> Result<f64> {
    let (mu1, mu2) = gen_correlated_means(c.d, c.r, rng::derive_u64(seed, "means", &[]))?;
    let build = |i: u64, s: f64| {
        covariance::build(
            &CovarianceSpec::spiked_random(c.d, s, c.sigma),
            Some(rng::derive_u64(seed, "covariance", &[i])),
        )
        .map(std::sync::Arc::new)
    };
    let (s1, s2) = (build(0, c.sigma1)?, build(1, c.sigma2)?);
    let ds = gen_gmm(c.n, &mu1, &mu2, s1.clone(), s2.clone(), seed)?;
    let fit = solve_gmm_classifier(&ds, lambda)?;
    classification_error(&fit.w_hat, &mu1, &mu2, &s1, &s2)
}

/// For each `λ`: direct solves over `trials` dataset seeds, and the spiked
/// and isotropic predictions.
pub fn run_classification_sweep(cfg: &ExperimentConfig) -> Result<ClassificationSweep> {
    if cfg.experiment != ExperimentKind::ClassificationSweep {
        return Err(Error::config("run_classification_sweep needs experiment = classification_sweep"));
    }
    let c = &cfg.classification;
    let lambdas = cfg.lambdas();
    let trials = cfg.trial_count();
    let solve_cfg = AoClassSolveConfig::default();
    let theory = lambdas
        .par_iter()
        .map(|&lam| -> Result<(f64, f64, bool)> {
            let spec = ClassAoSpec::spiked(c.n, c.d, lam, c.r, c.sigma1, c.sigma2, c.sigma)?;
            let iso = spec.isotropic_counterpart()?;
            let solve = |s: &ClassAoSpec| match solve_ao_class(s, &solve_cfg) {
                Ok(sol) => Ok((sol.predicted_error, sol.converged)),
                Err(Error::Solver(_)) => Ok((f64::NAN, false)),
                Err(e) => Err(e),
            };
            let (a, ca) = solve(&spec)?;
            let (b, cb) = solve(&iso)?;
            Ok((a, b, ca && cb))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..lambdas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(i, t)| classification_po_trial(c, lambdas[i], cfg.trial_seed(&[], i, t)))
        .collect::<Result<Vec<_>>>()?;
    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lam)| {
            let (po_error, std) = mean_std(&errors[i * trials..(i + 1) * trials]);
            let (ao_error, po_error_isotropic, ao_converged) = theory[i];
            ClassificationRow {
                lam,
                ao_error,
                po_error,
                po_stderr: std / (trials as f64).sqrt(),
                po_error_isotropic,
                ao_converged,
            }
        })
        .collect();
    Ok(ClassificationSweep {
        n: c.n,
        d: c.d,
        trials,
        rows,
    })
}

/// The fixed instance set of the Monte-Carlo comparison (exhaustive nets of
/// at most 10⁴ pairs).
pub fn default_mc_instances() -> Result<Vec<MinMaxInstance>> {
    let specs = [
        (1, 2, 2, 20, 20, true),
        (1, 3, 3, 30, 30, false),
        (2, 2, 2, 10, 10, true),
        (2, 3, 2, 16, 8, false),
        (2, 2, 3, 25, 20, true),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(k, d, n, w_points, v_points, with_psi))| {
            MinMaxInstance::random(
                &RandomInstance {
                    k,
                    d,
                    n,
                    w_points,
                    v_points,
                    with_psi,
                },
                1 + i as u64,
            )
        })
        .collect()
}

/// Three compact instances: `Σ = I` (k = 1), two random blocks, and `Σ = 4I` with unequal radii.
pub fn default_compact_instances(net_points: usize) -> Result<Vec<CompactInstance>> {
    let mut r = rng::stream(1, "checks.compact.covariances", &[]);
    let random_psd = |r: &mut rand_chacha::ChaCha8Rng, d: usize| {
        let a = rng::normal_matrix(r, d, d);
        PsdMatrix::from_dense(&a * a.transpose() / d as f64 + nalgebra::DMatrix::identity(d, d) * 0.1)
    };
    let two = vec![random_psd(&mut r, 2)?, random_psd(&mut r, 2)?];
    Ok(vec![
        CompactInstance::new(vec![PsdMatrix::isotropic(2, 1.0)?], vec![2], 1.0, 1.0, net_points, 1)?,
        CompactInstance::new(two, vec![2, 3], 1.0, 1.0, net_points, 2)?,
        CompactInstance::new(vec![PsdMatrix::isotropic(3, 2.0)?], vec![2], 1.5, 0.5, net_points, 3)?,
    ])
}

#[derive(Serialize)]
struct SummaryRow {
    check: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct LipschitzCsvRow {
    instance: usize,
    pairs: usize,
    skipped: usize,
    max_ratio: f64,
    bound: f64,
}

/// Covariance-gap sweep, Monte-Carlo comparison on the fixed instances,
/// Lipschitz and concentration checks. A failed check yields [`Outcome::Violation`].
pub fn run_checks(cfg: &ExperimentConfig) -> Result<RunReport> {
    let c = &cfg.checks;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let trials = cfg.trial_count();
    let mut messages = Vec::new();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    if trials < LOW_POWER_TRIALS {
        messages.push(format!(
            "warning: {trials} Monte-Carlo trials give insufficient statistical power (use at least {LOW_POWER_TRIALS})"
        ));
    }
    let seed = cfg.master_seed;

    let gap = gap_sweep(c.gap_tuples, rng::derive_u64(seed, "checks", &[0]), c.fault)?;
    let path = dir.join("checks_gap.csv");
    write_rows(&path, [&gap])?;
    files.push(path);
    summary.push(SummaryRow {
        check: "covariance_gap".into(),
        passed: gap.passed(1e-12),
        detail: format!(
            "{} tuples, min gap {:e}, max |gap| at equal index {:e}, max variance mismatch {:e}",
            gap.tuples, gap.min_gap, gap.max_gap_at_equal, gap.max_variance_mismatch
        ),
    });

    for (i, inst) in default_mc_instances()?.iter().enumerate() {
        let s = rng::derive_u64(seed, "checks", &[1, i as u64]);
        let grid = pilot_t_grid(inst, c.t_points, c.pilot_trials, s)?;
        let rep = mc_gcgmt_inequality(inst, &grid, trials, s)?;
        let path = dir.join(format!("checks_mc_{i}.csv"));
        rep.write_csv(&path)?;
        files.push(path);
        let worst = rep
            .rows
            .iter()
            .max_by(|a, b| a.violation_sigma.total_cmp(&b.violation_sigma))
            .expect("non-empty grid");
        summary.push(SummaryRow {
            check: format!("mc_inequality_{i}"),
            passed: rep.passed(3.0),
            detail: format!(
                "instance seed {}, k = {}, {} pairs, worst t = {:.4} at {:.2} sigma",
                i + 1,
                inst.k,
                inst.pairs(),
                worst.t,
                worst.violation_sigma
            ),
        });
    }

    let compact = default_compact_instances(c.net_points)?;
    let mut lip_rows = Vec::new();
    for (i, inst) in compact.iter().enumerate() {
        let rep = lipschitz_check(inst, c.lipschitz_pairs, rng::derive_u64(seed, "checks", &[2, i as u64]));
        summary.push(SummaryRow {
            check: format!("lipschitz_{i}"),
            passed: rep.passed(),
            detail: format!("max ratio {:.6} vs bound {:.6} over {} pairs", rep.max_ratio, rep.bound, rep.pairs),
        });
        lip_rows.push(LipschitzCsvRow {
            instance: i,
            pairs: rep.pairs,
            skipped: rep.skipped,
            max_ratio: rep.max_ratio,
            bound: rep.bound,
        });

        let conc = concentration_check(
            inst,
            c.concentration_trials,
            &EpsilonGrid::SampleStd(c.epsilon_multiples.clone()),
            rng::derive_u64(seed, "checks", &[3, i as u64]),
        )?;
        let path = dir.join(format!("checks_concentration_{i}.csv"));
        write_rows(&path, &conc.rows)?;
        files.push(path);
        let offending: Vec<String> = conc
            .rows
            .iter()
            .filter(|r| r.frequency > r.bound + 3.0 * r.stderr)
            .map(|r| format!("{:.4}", r.epsilon))
            .collect();
        summary.push(SummaryRow {
            check: format!("concentration_{i}"),
            passed: conc.passed(3.0),
            detail: if offending.is_empty() {
                format!("{} trials, {} epsilon values", conc.trials, conc.rows.len())
            } else {
                format!("exceeded at epsilon {}", offending.join(" "))
            },
        });
    }
    let path = dir.join("checks_lipschitz.csv");
    write_rows(&path, lip_rows)?;
    files.push(path);

    let path = dir.join("checks_summary.csv");
    write_rows(&path, &summary)?;
    files.push(path);
    let mut outcome = Outcome::Success;
    for s in &summary {
        messages.push(format!("{} {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.check, s.detail));
        if !s.passed {
            outcome = Outcome::Violation;
        }
    }
    Ok(RunReport { outcome, files, messages })
}

/// Run the configured experiment and write its CSV files into `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cfg.experiment {
        ExperimentKind::RegressionSweep => {
            let mut report = RunReport {
                outcome: Outcome::Success,
                files: Vec::new(),
                messages: Vec::new(),
            };
            for sweep in run_regression_sweep(cfg)? {
                report.files.extend(sweep.write_csv(&cfg.output_dir)?);
                for row in sweep.rows.iter().filter(|r| !r.ao_converged) {
                    report.outcome = report.outcome.worst(Outcome::SolverFailure);
                    report.messages.push(format!("d = {}, lam = {}: saddle search did not converge", sweep.d, row.lam));
                }
            }
            Ok(report)
        }
        ExperimentKind::ClassificationSweep => {
            let sweep = run_classification_sweep(cfg)?;
            let mut report = RunReport {
                outcome: Outcome::Success,
                files: vec![sweep.write_csv(&cfg.output_dir)?],
                messages: Vec::new(),
            };
            for row in sweep.rows.iter().filter(|r| !r.ao_converged) {
                report.outcome = Outcome::SolverFailure;
                report.messages.push(format!("lam = {}: prediction did not converge", row.lam));
            }
            Ok(report)
        }
        ExperimentKind::Checks => run_checks(cfg),
    }
}
