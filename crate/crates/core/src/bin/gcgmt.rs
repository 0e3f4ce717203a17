//! Experiment runner. Exit codes: 0 success, 1 usage or configuration error,
//! 2 check violation, 3 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gcgmt::harness::{run, ExperimentConfig, ExperimentKind, Overrides};
use gcgmt::Error;

#[derive(Debug, Parser)]
#[command(version, about = "Run regression/classification sweeps and comparison checks, writing CSV results")]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// regression_sweep, classification_sweep or checks (overrides the file).
    #[arg(long)]
    experiment: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo repetitions.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Solver(_)) { 3 } else { 1 })
        }
    }
}

fn execute(cli: Cli) -> gcgmt::Result<u8> {
    let experiment = cli.experiment.as_deref().map(str::parse::<ExperimentKind>).transpose()?;
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let kind = experiment.ok_or_else(|| Error::Config("either --config or --experiment is required".into()))?;
            ExperimentConfig::new(kind)
        }
    };
    let cfg = base.apply(&Overrides {
        experiment,
        seed: cli.seed,
        out: cli.out,
        trials: cli.trials,
        jobs: cli.jobs,
    })?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    let report = run(&cfg)?;
    for m in &report.messages {
        eprintln!("{m}");
    }
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(report.outcome.exit_code() as u8)
}
