//! Monte-Carlo checks of the Gaussian comparison: covariance gap, the
//! probability inequality, Lipschitz constant and concentration.

use gcgmt::checks::{
    concentration_check, gap_sweep, lipschitz_check, mc_gcgmt_inequality, pilot_t_grid, CompactInstance, EpsilonGrid, Fault,
    MinMaxInstance, RandomInstance,
};
use gcgmt::covariance::PsdMatrix;

fn main() -> gcgmt::Result<()> {
    let gap = gap_sweep(2000, 1, Fault::None)?;
    println!("gap sweep: {} tuples, min gap {:.2e}, passed {}", gap.tuples, gap.min_gap, gap.passed(1e-12));

    let inst = MinMaxInstance::random(
        &RandomInstance { k: 2, d: 2, n: 2, w_points: 10, v_points: 10, with_psi: true },
        3,
    )?;
    let grid = pilot_t_grid(&inst, 9, 2000, 4)?;
    let mc = mc_gcgmt_inequality(&inst, &grid, 20_000, 5)?;
    for row in &mc.rows {
        println!("t {:>8.3}: P(Φ<t) {:.4}  2^k P(φ<t) {:.4}", row.t, row.p_phi_hat, row.p_ao_scaled);
    }
    println!("largest excess {:.1} σ", mc.max_violation_sigma());

    let compact = CompactInstance::new(vec![PsdMatrix::isotropic(2, 1.0)?], vec![2], 1.0, 1.0, 200, 6)?;
    let lip = lipschitz_check(&compact, 500, 7);
    println!("Lipschitz: max ratio {:.3} ≤ bound {:.3}: {}", lip.max_ratio, lip.bound, lip.passed());
    let conc = concentration_check(&compact, 5000, &EpsilonGrid::SampleStd(vec![1.0, 2.0, 3.0]), 8)?;
    for row in &conc.rows {
        println!("ε {:.3}: frequency {:.4} ≤ bound {:.4}", row.epsilon, row.frequency, row.bound);
    }
    Ok(())
}
