//! Predict the test error of the least-squares mixture classifier with
//! spiked and isotropic covariances.

use gcgmt::ao_classification::{solve_ao_class, AoClassSolveConfig, ClassAoSpec};

fn main() -> gcgmt::Result<()> {
    let (n, d, r) = (300, 700, 0.9);
    println!("{:>6} {:>10} {:>10}", "lambda", "spiked", "isotropic");
    for lam in [1.0, 10.0, 100.0, 1000.0, 5000.0] {
        let spiked = ClassAoSpec::spiked(n, d, lam, r, 3.0, 3.0, 10.0)?;
        let iso = spiked.isotropic_counterpart()?;
        let a = solve_ao_class(&spiked, &AoClassSolveConfig::default())?;
        let b = solve_ao_class(&iso, &AoClassSolveConfig::default())?;
        println!("{lam:>6} {:>10.4} {:>10.4}", a.predicted_error, b.predicted_error);
    }
    Ok(())
}
