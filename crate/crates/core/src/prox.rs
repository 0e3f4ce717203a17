//! Proximal operators, Moreau envelopes and the square-root trick.
//!
//! For a separable loss `f` and `t > 0`,
//! `M_{t f}(x) = min_z f(z) + |x - z|^2 / (2t)` and `prox_{t f}(x)` is the minimizer.
//!
//! Normalization table (the AO objectives state which entry they use):
//!
//! | name      | value            | quadratic coefficient |
//! |-----------|------------------|-----------------------|
//! | `half_sq` | `½‖x‖²`          | 0.5                   |
//! | `sq`      | `‖x‖²`           | 1.0                   |
//! | `abs`     | `‖x‖₁`           | —                     |

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::covariance::PsdMatrix;
use crate::error::{Error, Result};
use crate::optim::golden_section;

/// A convex scalar function applied coordinate-wise.
pub trait ScalarLoss: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: f64) -> f64;

    /// Scalar prox. The default solves the strongly convex 1-D problem numerically.
    fn prox(&self, t: f64, x: f64) -> f64 {
        numeric_prox(|z| self.value(z), t, x)
    }
}

/// Minimize `f(z) + (z - x)^2 / (2t)` by bracketing then golden-section search.
fn numeric_prox<F: Fn(f64) -> f64>(f: F, t: f64, x: f64) -> f64 {
    let phi = |z: f64| f(z) + (z - x) * (z - x) / (2.0 * t);
    // Expand a bracket around x until both ends are worse than the center.
    let f0 = phi(x);
    let mut w = t.max(1e-3) * (1.0 + x.abs());
    let mut lo = x - w;
    let mut hi = x + w;
    for _ in 0..200 {
        if phi(lo) > f0 && phi(hi) > f0 {
            break;
        }
        w *= 2.0;
        lo = x - w;
        hi = x + w;
    }
    golden_section(phi, lo, hi, 1e-14).0
}

#[derive(Clone)]
pub enum SeparableLoss {
    /// `½‖x‖²`
    HalfSq,
    /// `‖x‖²`
    Sq,
    /// `‖x‖₁`
    Abs,
    Custom(Arc<dyn ScalarLoss>),
}

impl fmt::Debug for SeparableLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeparableLoss({})", self.name())
    }
}

impl PartialEq for SeparableLoss {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Custom(a), Self::Custom(b)) => Arc::ptr_eq(a, b),
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("prox parameter t must be positive, got {t}")))
    }
}

impl SeparableLoss {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "half_sq" => Ok(Self::HalfSq),
            "sq" => Ok(Self::Sq),
            "abs" => Ok(Self::Abs),
            other => Err(Error::config(format!("unknown loss '{other}' (expected half_sq, sq or abs)"))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::HalfSq => "half_sq",
            Self::Sq => "sq",
            Self::Abs => "abs",
            Self::Custom(l) => l.name(),
        }
    }

    /// `c` such that the loss is `c‖x‖²`, if it is a pure quadratic.
    pub fn quadratic_coefficient(&self) -> Option<f64> {
        match self {
            Self::HalfSq => Some(0.5),
            Self::Sq => Some(1.0),
            _ => None,
        }
    }

    pub fn value_scalar(&self, x: f64) -> f64 {
        match self {
            Self::HalfSq => 0.5 * x * x,
            Self::Sq => x * x,
            Self::Abs => x.abs(),
            Self::Custom(l) => l.value(x),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::HalfSq => 0.5 * x.norm_squared(),
            Self::Sq => x.norm_squared(),
            Self::Abs => x.lp_norm(1),
            Self::Custom(l) => x.iter().map(|&v| l.value(v)).sum(),
        }
    }

    /// Scalar prox without the domain check on `t`.
    fn prox_unchecked(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::HalfSq => x / (1.0 + t),
            Self::Sq => x / (1.0 + 2.0 * t),
            Self::Abs => x.signum() * (x.abs() - t).max(0.0),
            Self::Custom(l) => l.prox(t, x),
        }
    }

    fn envelope_unchecked(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::HalfSq => x * x / (2.0 * (1.0 + t)),
            Self::Sq => x * x / (1.0 + 2.0 * t),
            Self::Abs => {
                if x.abs() <= t {
                    x * x / (2.0 * t)
                } else {
                    x.abs() - 0.5 * t
                }
            }
            Self::Custom(l) => {
                let z = l.prox(t, x);
                l.value(z) + (x - z) * (x - z) / (2.0 * t)
            }
        }
    }

    pub fn prox_scalar(&self, t: f64, x: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.prox_unchecked(t, x))
    }

    pub fn prox(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_t(t)?;
        Ok(x.map(|v| self.prox_unchecked(t, v)))
    }

    pub fn envelope_scalar(&self, t: f64, x: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.envelope_unchecked(t, x))
    }

    pub fn envelope(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        check_t(t)?;
        Ok(x.iter().map(|&v| self.envelope_unchecked(t, v)).sum())
    }

    /// `∇M_{t f}(x) = (x - prox_{t f}(x)) / t`
    pub fn envelope_gradient(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_t(t)?;
        Ok(x.map(|v| (v - self.prox_unchecked(t, v)) / t))
    }
}

pub fn moreau_envelope(loss: &SeparableLoss, t: f64, x: &DVector<f64>) -> Result<f64> {
    loss.envelope(t, x)
}

pub fn prox(loss: &SeparableLoss, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    loss.prox(t, x)
}

pub fn envelope_gradient(loss: &SeparableLoss, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    loss.envelope_gradient(t, x)
}

/// Envelope of the ridge regularizer under the metric `A`:
/// `normalization * min_θ [ (λ/2)‖θ‖² + ½ (θ - x)ᵀ A (θ - x) ]`
/// with `x = θ* - A⁻¹ b`.
#[derive(Debug, Clone)]
pub struct MatrixScaledQuadEnvelope {
    pub reg_lambda: f64,
    pub scale: PsdMatrix,
    pub normalization: f64,
}

/// Returns the envelope value and its minimizer `(λI + A)⁻¹(Aθ* - b)`.
pub fn quad_matrix_envelope(
    env: &MatrixScaledQuadEnvelope,
    theta_star: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let a = &env.scale;
    let d = a.dim();
    if theta_star.len() != d || b.len() != d {
        return Err(Error::shape(format!(
            "envelope vectors must have length {d}, got {} and {}",
            theta_star.len(),
            b.len()
        )));
    }
    if !(env.reg_lambda >= 0.0) {
        return Err(Error::domain(format!("regularization must be non-negative, got {}", env.reg_lambda)));
    }
    let a_theta = a.apply(theta_star);
    let rhs = &a_theta - b;
    let theta = a.solve_shifted(env.reg_lambda, &rhs)?;

    // (θ - x)ᵀA(θ - x) = θᵀAθ - 2θᵀ(Aθ* - b) + xᵀAx,
    // xᵀAx = θ*ᵀAθ* - 2θ*ᵀb + bᵀA⁻¹b.
    let b_term = if b.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        b.dot(&a.solve_shifted(0.0, b)?)
    };
    let x_ax = theta_star.dot(&a_theta) - 2.0 * theta_star.dot(b) + b_term;
    let quad = a.quad_form(&theta) - 2.0 * theta.dot(&rhs) + x_ax;
    let value = env.normalization * (0.5 * env.reg_lambda * theta.norm_squared() + 0.5 * quad.max(0.0));
    Ok((value, theta))
}

/// `min_{β>0} 1/(2β) + βx/2`, which equals `√x`; evaluated numerically.
pub fn sqrt_trick_check(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::domain(format!("square-root trick needs x > 0, got {x}")));
    }
    let g = |lb: f64| {
        let b = lb.exp();
        0.5 / b + 0.5 * b * x
    };
    let grid: Vec<f64> = (0..=400).map(|i| -20.0 + 40.0 * i as f64 / 400.0).collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| g(*a.1).total_cmp(&g(*b.1)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    Ok(golden_section(g, lo, hi, 1e-12).1)
}
