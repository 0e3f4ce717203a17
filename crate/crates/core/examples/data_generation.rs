//! Draw a multi-source regression dataset and a two-class Gaussian mixture.

use std::sync::Arc;

use gcgmt::covariance::{self, CovarianceSpec};
use gcgmt::data::{gen_correlated_means, gen_gmm, gen_regression};
use nalgebra::DVector;

fn main() -> gcgmt::Result<()> {
    let d = 50;
    let covs = [0.5, 0.7, 0.3]
        .iter()
        .enumerate()
        .map(|(l, &s)| covariance::build(&CovarianceSpec::spiked_random(d, s, 1.0), Some(l as u64)))
        .collect::<gcgmt::Result<Vec<_>>>()?;
    let theta = DVector::from_element(d, 1.0);
    let ds = gen_regression(100, &covs, &[0.1, 0.2, 0.3], &theta, 2024)?;
    for (l, (x, y)) in ds.x.iter().zip(&ds.y).enumerate() {
        println!("source {l}: X {}×{}, mean |y| {:.3}", x.nrows(), x.ncols(), y.abs().mean());
    }

    let (mu1, mu2) = gen_correlated_means(d, 0.9, 1)?;
    let s1 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(d, 3.0, 10.0), Some(11))?);
    let s2 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(d, 3.0, 10.0), Some(12))?);
    let gmm = gen_gmm(40, &mu1, &mu2, s1, s2, 5)?;
    let positives = gmm.labels.iter().filter(|&&y| y > 0.0).count();
    println!("mixture: {} samples, {positives} labelled +1, corr(μ1, μ2) = {:.3}", gmm.n, mu1.dot(&mu2) / (mu1.norm() * mu2.norm()));
    Ok(())
}
