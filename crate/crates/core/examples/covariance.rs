//! Build spiked, isotropic and dense covariances and inspect their spectra.

use gcgmt::covariance::{self, CovarianceSpec, PsdMatrix};
use nalgebra::{DMatrix, DVector};

fn main() -> gcgmt::Result<()> {
    let spiked = covariance::build(&CovarianceSpec::spiked_random(200, 0.5, 1.0), Some(7))?;
    println!(
        "spiked d=200: trace {:.3}, eigenvalues [{:.3}, {:.3}]",
        spiked.trace(),
        spiked.min_eigenvalue(),
        spiked.max_eigenvalue()
    );

    let iso = PsdMatrix::isotropic(200, 0.5)?;
    let x = DVector::from_element(200, 1.0);
    println!("xᵀΣx: spiked {:.3}, isotropic {:.3}", spiked.quad_form(&x), iso.quad_form(&x));

    // (Σ + 2I)⁻¹x through the eigensystem
    let y = spiked.solve_shifted(2.0, &x)?;
    let back = spiked.apply(&y) + &y * 2.0;
    println!("shifted solve residual {:.2e}", (back - x).norm());

    let dense = PsdMatrix::from_dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]))?;
    let s = dense.principal_sqrt();
    println!("dense eigenvalues {:?}", dense.eigenvalues().as_slice());
    println!("‖S² - Σ‖ = {:.2e}", (s * s - dense.entries()).norm());
    Ok(())
}
