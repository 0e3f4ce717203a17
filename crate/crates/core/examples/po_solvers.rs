//! Solve the primary problems directly: multi-source ridge (closed form and
//! proximal gradient) and the regularized least-squares mixture classifier.

use std::sync::Arc;

use gcgmt::covariance::{self, CovarianceSpec};
use gcgmt::data::{gen_correlated_means, gen_gmm, gen_regression};
use gcgmt::po::{classification_error, closed_form_gen_error, solve_gmm_classifier, solve_ridge_multisource, solve_separable_pgd, PgdOptions};
use gcgmt::prox::SeparableLoss;
use nalgebra::DVector;

fn main() -> gcgmt::Result<()> {
    let d = 80;
    let covs = (0..2)
        .map(|l| covariance::build(&CovarianceSpec::spiked_random(d, 0.5, 1.0), Some(l)))
        .collect::<gcgmt::Result<Vec<_>>>()?;
    let sigmas = [0.1, 0.3];
    let theta = DVector::from_element(d, 1.0);
    let ds = gen_regression(100, &covs, &sigmas, &theta, 3)?;

    let ridge = solve_ridge_multisource(&ds, 0.5)?;
    let pgd = solve_separable_pgd(&ds, &[SeparableLoss::HalfSq, SeparableLoss::HalfSq], &SeparableLoss::HalfSq, 0.5, PgdOptions::default())?;
    println!(
        "ridge: train {:.5}, gen {:.5}; PGD agrees to {:.1e} after {} iterations",
        ridge.training_error,
        closed_form_gen_error(&ridge.theta_hat, &theta, &covs, &sigmas)?,
        (&ridge.theta_hat - &pgd.theta_hat).norm(),
        pgd.meta.iterations
    );

    let lasso = solve_separable_pgd(&ds, &[SeparableLoss::HalfSq, SeparableLoss::Abs], &SeparableLoss::Abs, 0.5, PgdOptions::default())?;
    println!("ℓ1 losses and penalty: gen {:.5}", closed_form_gen_error(&lasso.theta_hat, &theta, &covs, &sigmas)?);

    let (mu1, mu2) = gen_correlated_means(300, 0.9, 9)?;
    let s1 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(300, 3.0, 10.0), Some(1))?);
    let s2 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(300, 3.0, 10.0), Some(2))?);
    let gmm = gen_gmm(200, &mu1, &mu2, s1.clone(), s2.clone(), 4)?;
    for lam in [1.0, 100.0, 1000.0] {
        let fit = solve_gmm_classifier(&gmm, lam)?;
        println!("classifier λ = {lam}: error {:.4}", classification_error(&fit.w_hat, &mu1, &mu2, &s1, &s2)?);
    }
    Ok(())
}
