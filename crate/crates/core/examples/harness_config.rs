//! Configure and run an experiment programmatically, as the CLI does.

use gcgmt::harness::{run, ExperimentConfig};

fn main() -> gcgmt::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
        experiment = "regression_sweep"
        lambda_grid = [0.1, 1.0, 10.0]
        trials = 5
        master_seed = 2024
        output_dir = "target/example-results"

        [regression]
        d = [50]
        "#,
    )?;
    let report = run(&cfg)?;
    println!("outcome {:?} (exit code {})", report.outcome, report.outcome.exit_code());
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
