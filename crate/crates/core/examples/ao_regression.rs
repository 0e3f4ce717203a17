//! Predict train and generalization error of multi-source ridge from the
//! scalar auxiliary problem and compare with direct solves.

use gcgmt::ao_regression::{solve_ao_regression, AoRegressionProblem, AoSolveConfig};
use gcgmt::covariance::{self, CovarianceSpec};
use gcgmt::data::gen_regression;
use gcgmt::po::{closed_form_gen_error, mean_stderr, solve_ridge_multisource};
use nalgebra::DVector;

fn main() -> gcgmt::Result<()> {
    let (n, d) = (100, 100);
    let covs = [0.5, 0.7, 0.3]
        .iter()
        .enumerate()
        .map(|(l, &s)| covariance::build(&CovarianceSpec::spiked_random(d, s, 1.0), Some(l as u64)))
        .collect::<gcgmt::Result<Vec<_>>>()?;
    let sigmas = vec![0.1, 0.2, 0.3];
    let theta = DVector::from_element(d, 1.0);
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "lambda", "train AO", "train PO", "gen AO", "gen PO");
    for lam in [0.01, 0.1, 1.0, 10.0] {
        let p = AoRegressionProblem::new(n, covs.clone(), sigmas.clone(), theta.clone(), lam)?;
        let ao = solve_ao_regression(&p, &AoSolveConfig::default())?;
        let (mut train, mut gen) = (vec![], vec![]);
        for t in 0..20 {
            let ds = gen_regression(n, &covs, &sigmas, &theta, t)?;
            let fit = solve_ridge_multisource(&ds, lam)?;
            train.push(fit.training_error);
            gen.push(closed_form_gen_error(&fit.theta_hat, &theta, &covs, &sigmas)?);
        }
        println!(
            "{lam:>8} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            ao.predicted_train_error,
            mean_stderr(&train).0,
            ao.predicted_gen_error,
            mean_stderr(&gen).0
        );
    }
    Ok(())
}
