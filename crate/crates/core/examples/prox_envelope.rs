//! Proximal operators, Moreau envelopes and the envelope gradient identity.

use gcgmt::prox::SeparableLoss;
use nalgebra::DVector;

fn main() -> gcgmt::Result<()> {
    let x = DVector::from_vec(vec![-2.0, -0.3, 0.0, 0.4, 1.5]);
    let t = 0.5;
    for loss in [SeparableLoss::HalfSq, SeparableLoss::Sq, SeparableLoss::Abs] {
        let p = loss.prox(t, &x)?;
        let e = loss.envelope(t, &x)?;
        let grad = loss.envelope_gradient(t, &x)?;
        // ∇e = (x - prox)/t
        let check = (&x - &p) / t - &grad;
        println!(
            "{:8} prox {:?}\n         envelope {e:.4}, gradient identity error {:.1e}",
            loss.name(),
            p.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            check.norm()
        );
    }
    Ok(())
}
