//! Primary problems: multi-source regression and two-class GMM classification.
//!
//! Regression objective (per-source normalized, ridge in `1/2d` scale):
//! `(1/nk) Σ_l ℓ_l(y_l - X_l θ / √d) + (λ/d) f(θ)`, which for `ℓ = f = ½‖·‖²`
//! is `(1/nk) Σ_l ½‖y_l - X_l θ/√d‖² + (λ/2d)‖θ‖²`.
//!
//! Classification objective: `‖B w - z‖² + λ‖w‖²` with `B` the data matrix.

use nalgebra::{DMatrix, DVector};

use crate::covariance::PsdMatrix;
use crate::data::{GmmDataset, RegressionDataset};
use crate::error::{Error, Result};
use crate::prox::SeparableLoss;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverMeta {
    pub iterations: usize,
    /// Normal-equation residual (closed form) or gradient-mapping norm (iterative).
    pub residual: f64,
    pub converged: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub theta_hat: DVector<f64>,
    /// `(1/nk) Σ_l ℓ_l(y_l - X_l θ̂ / √d)`.
    pub training_error: f64,
    pub meta: SolverMeta,
}

#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub w_hat: DVector<f64>,
    pub objective_value: f64,
    pub residual: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("regularization must be positive, got {lambda}")))
    }
}

fn residuals(ds: &RegressionDataset, theta: &DVector<f64>) -> Vec<DVector<f64>> {
    let s = 1.0 / (ds.d as f64).sqrt();
    ds.x.iter().zip(&ds.y).map(|(x, y)| y - x * theta * s).collect()
}

/// Loss part of the regression objective at `theta`.
pub fn training_loss(ds: &RegressionDataset, losses: &[SeparableLoss], theta: &DVector<f64>) -> f64 {
    let nk = (ds.n * ds.k) as f64;
    residuals(ds, theta)
        .iter()
        .zip(losses.iter().cycle())
        .map(|(r, l)| l.value(r))
        .sum::<f64>()
        / nk
}

/// Full regression objective with `(λ/d) reg(θ)`.
pub fn regression_objective(
    ds: &RegressionDataset,
    losses: &[SeparableLoss],
    reg: &SeparableLoss,
    lambda: f64,
    theta: &DVector<f64>,
) -> f64 {
    training_loss(ds, losses, theta) + lambda / ds.d as f64 * reg.value(theta)
}

/// Closed-form ridge solution of the half-squared multi-source objective.
pub fn solve_ridge_multisource(ds: &RegressionDataset, lambda: f64) -> Result<RegressionFit> {
    check_lambda(lambda)?;
    let (n, k, d) = (ds.n as f64, ds.k as f64, ds.d as f64);
    let mut h = DMatrix::identity(ds.d, ds.d) * (lambda / d);
    let mut rhs = DVector::zeros(ds.d);
    for (x, y) in ds.x.iter().zip(&ds.y) {
        h += x.tr_mul(x) / (n * k * d);
        rhs += x.tr_mul(y) / (n * k * d.sqrt());
    }
    let h = (&h + h.transpose()) * 0.5;
    let theta = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solver("ridge normal equations are not positive definite".into()))?
        .solve(&rhs);
    let residual = (&h * &theta - &rhs).norm();
    let training_error = training_loss(ds, &[SeparableLoss::HalfSq], &theta);
    Ok(RegressionFit {
        theta_hat: theta,
        training_error,
        meta: SolverMeta {
            iterations: 1,
            residual,
            converged: residual <= 1e-8 * rhs.norm().max(f64::MIN_POSITIVE),
            warning: None,
        },
    })
}

/// Proximal-gradient settings for [`solve_separable_pgd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdOptions {
    pub max_iters: usize,
    /// Target gradient-mapping norm.
    pub tol: f64,
    /// Moreau parameter used to smooth losses that are not quadratic.
    pub smoothing: f64,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            tol: 1e-9,
            smoothing: 1e-4,
        }
    }
}

/// Accelerated proximal gradient with backtracking and a monotone restart.
///
/// Quadratic losses enter the smooth part exactly; other losses are replaced
/// by their Moreau envelope with parameter `opts.smoothing`. The regularizer
/// is handled through its prox.
pub fn solve_separable_pgd(
    ds: &RegressionDataset,
    losses: &[SeparableLoss],
    reg: &SeparableLoss,
    lambda: f64,
    opts: PgdOptions,
) -> Result<RegressionFit> {
    check_lambda(lambda)?;
    if losses.len() != ds.k && losses.len() != 1 {
        return Err(Error::config(format!("{} losses for {} sources", losses.len(), ds.k)));
    }
    let loss_of = |l: usize| if losses.len() == 1 { &losses[0] } else { &losses[l] };
    let (nk, d) = ((ds.n * ds.k) as f64, ds.d as f64);
    let sd = d.sqrt();
    let mu = opts.smoothing;

    let smooth_value = |theta: &DVector<f64>| -> f64 {
        residuals(ds, theta)
            .iter()
            .enumerate()
            .map(|(l, r)| match loss_of(l).quadratic_coefficient() {
                Some(_) => loss_of(l).value(r),
                None => loss_of(l).envelope(mu, r).unwrap_or(f64::INFINITY),
            })
            .sum::<f64>()
            / nk
    };
    let smooth_grad = |theta: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(ds.d);
        for (l, (r, x)) in residuals(ds, theta).iter().zip(&ds.x).enumerate() {
            let dr = match loss_of(l).quadratic_coefficient() {
                Some(c) => r * (2.0 * c),
                None => loss_of(l).envelope_gradient(mu, r).expect("smoothing parameter is positive"),
            };
            g -= x.tr_mul(&dr) / (nk * sd);
        }
        g
    };
    let reg_value = |theta: &DVector<f64>| lambda / d * reg.value(theta);
    let reg_prox = |step: f64, v: &DVector<f64>| reg.prox(step * lambda / d, v).expect("step is positive");

    // Initial curvature estimate from the largest eigenvalue of Σ XᵀX / (nkd).
    let mut lip = {
        let mut gram = DMatrix::zeros(ds.d, ds.d);
        for (l, x) in ds.x.iter().enumerate() {
            let c = loss_of(l).quadratic_coefficient().map_or(1.0 / mu, |c| 2.0 * c);
            gram += x.tr_mul(x) * c;
        }
        let ev = nalgebra::SymmetricEigen::new(gram / (nk * d)).eigenvalues;
        ev.max().max(1e-12)
    };

    let mut theta = DVector::zeros(ds.d);
    let mut f_theta = smooth_value(&theta) + reg_value(&theta);
    let mut y = theta.clone();
    let mut t_mom = 1.0f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let gy = smooth_grad(&y);
        let fy = smooth_value(&y);
        // Backtracking on the local Lipschitz constant.
        let next = loop {
            let cand = reg_prox(1.0 / lip, &(&y - &gy / lip));
            let diff = &cand - &y;
            let model = fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if smooth_value(&cand) <= model + 1e-12 * fy.abs().max(1.0) || lip > 1e300 {
                break cand;
            }
            lip *= 2.0;
        };
        residual = lip * (&y - &next).norm();
        let f_next = smooth_value(&next) + reg_value(&next);
        if f_next > f_theta + 4.0 * f64::EPSILON * f_theta.abs() {
            // Restart momentum from the last accepted iterate.
            y = theta.clone();
            t_mom = 1.0;
            if residual <= opts.tol {
                converged = true;
                break;
            }
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
        y = &next + (&next - &theta) * ((t_mom - 1.0) / t_new);
        t_mom = t_new;
        theta = next;
        f_theta = f_next;
        if residual <= opts.tol {
            converged = true;
            break;
        }
    }

    let training_error = residuals(ds, &theta)
        .iter()
        .enumerate()
        .map(|(l, r)| loss_of(l).value(r))
        .sum::<f64>()
        / nk;
    Ok(RegressionFit {
        theta_hat: theta,
        training_error,
        meta: SolverMeta {
            iterations,
            residual,
            converged,
            warning: (!converged).then(|| format!("stopped after {iterations} iterations with gradient-mapping norm {residual:e}")),
        },
    })
}

/// `(1/2k) Σ_l [σ_l² + (θ̂ - θ*)ᵀ Σ_l (θ̂ - θ*) / d]`
pub fn closed_form_gen_error(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    covariances: &[PsdMatrix],
    noise_sigmas: &[f64],
) -> Result<f64> {
    if covariances.len() != noise_sigmas.len() || covariances.is_empty() {
        return Err(Error::shape("one noise level per covariance required"));
    }
    let d = theta_star.len();
    if theta_hat.len() != d || covariances.iter().any(|c| c.dim() != d) {
        return Err(Error::shape("parameter and covariance dimensions differ"));
    }
    let delta = theta_hat - theta_star;
    let k = covariances.len() as f64;
    Ok(covariances
        .iter()
        .zip(noise_sigmas)
        .map(|(c, s)| s * s + c.quad_form(&delta) / d as f64)
        .sum::<f64>()
        / (2.0 * k))
}

/// Monte-Carlo estimate of the generalization error with `n_test` fresh
/// samples per source. Returns `(mean, stderr)` over test indices.
pub fn empirical_gen_error(
    theta_hat: &DVector<f64>,
    theta_star: &DVector<f64>,
    covariances: &[PsdMatrix],
    noise_sigmas: &[f64],
    n_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_test < 2 {
        return Err(Error::domain("n_test must be at least 2"));
    }
    if covariances.len() != noise_sigmas.len() || covariances.is_empty() {
        return Err(Error::shape("one noise level per covariance required"));
    }
    let d = theta_star.len();
    let k = covariances.len();
    let delta = theta_star - theta_hat;
    let mut per_test = vec![0.0; n_test];
    for (l, (c, &s)) in covariances.iter().zip(noise_sigmas).enumerate() {
        // xᵀ(θ* - θ̂)/√d = gᵀ Σ^{1/2}(θ* - θ̂)/√d
        let v = c.principal_sqrt() * &delta / (d as f64).sqrt();
        let mut feat = rng::stream(seed, "test.features", &[l as u64]);
        let mut nz = rng::stream(seed, "test.noise", &[l as u64]);
        for acc in per_test.iter_mut() {
            let g = rng::normal_vector(&mut feat, d);
            let e = g.dot(&v) + s * rng::normal(&mut nz);
            *acc += e * e / (2.0 * k as f64);
        }
    }
    Ok(mean_stderr(&per_test))
}

/// Sample mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `‖B w - z‖² + λ‖w‖²`
pub fn classifier_objective(ds: &GmmDataset, lambda: f64, w: &DVector<f64>) -> f64 {
    (&ds.data * w - &ds.labels).norm_squared() + lambda * w.norm_squared()
}

/// Ridge classifier `ŵ = (BᵀB + λI)⁻¹ Bᵀ z`, using the `n x n` dual system when `d > n`.
pub fn solve_gmm_classifier(ds: &GmmDataset, lambda: f64) -> Result<ClassifierFit> {
    check_lambda(lambda)?;
    let b = &ds.data;
    let z = &ds.labels;
    let fail = || Error::Solver("classifier normal equations are not positive definite".into());
    let w = if ds.d > ds.n {
        let mut k = b * b.transpose();
        for i in 0..ds.n {
            k[(i, i)] += lambda;
        }
        let alpha = k.cholesky().ok_or_else(fail)?.solve(z);
        b.tr_mul(&alpha)
    } else {
        let mut g = b.tr_mul(b);
        for i in 0..ds.d {
            g[(i, i)] += lambda;
        }
        g.cholesky().ok_or_else(fail)?.solve(&b.tr_mul(z))
    };
    // Stationarity of the objective: (BᵀB + λI) w - Bᵀz.
    let residual = (b.tr_mul(&(b * &w - z)) + &w * lambda).norm();
    Ok(ClassifierFit {
        objective_value: classifier_objective(ds, lambda, &w),
        w_hat: w,
        residual,
    })
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Misclassification probability of the rule `sign(xᵀw)` on the mixture:
/// `½Q(μ1ᵀw / √(wᵀΣ1w)) + ½Q(-μ2ᵀw / √(wᵀΣ2w))`.
pub fn classification_error(
    w: &DVector<f64>,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    sigma1: &PsdMatrix,
    sigma2: &PsdMatrix,
) -> Result<f64> {
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("classifier direction is zero".into()));
    }
    let term = |margin: f64, var: f64, class: usize| -> Result<f64> {
        if var > 0.0 {
            Ok(q_function(margin / var.sqrt()))
        } else if margin > 0.0 {
            Ok(0.0)
        } else if margin < 0.0 {
            Ok(1.0)
        } else {
            Err(Error::Degenerate(format!("class {class} has zero margin and zero variance along w")))
        }
    };
    let t1 = term(mu1.dot(w), sigma1.quad_form(w), 1)?;
    let t2 = term(-mu2.dot(w), sigma2.quad_form(w), 2)?;
    Ok(0.5 * t1 + 0.5 * t2)
}

/// Fraction of misclassified samples from a fresh draw of `n_per_class` per class.
pub fn empirical_classification_error(
    w: &DVector<f64>,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    sigma1: &PsdMatrix,
    sigma2: &PsdMatrix,
    n_per_class: usize,
    seed: u64,
) -> (f64, f64) {
    let mut errs = Vec::with_capacity(2 * n_per_class);
    for (class, (mu, s, sign)) in [(mu1, sigma1, 1.0), (mu2, sigma2, -1.0)].into_iter().enumerate() {
        // xᵀw = μᵀw + gᵀ Σ^{1/2} w
        let v = s.principal_sqrt() * w;
        let m = mu.dot(w);
        let mut r = rng::stream(seed, "class.test", &[class as u64]);
        for _ in 0..n_per_class {
            let score = m + rng::normal_vector(&mut r, w.len()).dot(&v);
            errs.push(if score * sign > 0.0 { 0.0 } else { 1.0 });
        }
    }
    mean_stderr(&errs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{self, CovarianceSpec};
    use crate::data::{gen_correlated_means, gen_gmm, gen_regression};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn fig1(d: usize, n: usize, seed: u64, noise: [f64; 3]) -> (Vec<PsdMatrix>, RegressionDataset) {
        let covs: Vec<PsdMatrix> = [0.5, 0.7, 0.3]
            .iter()
            .enumerate()
            .map(|(l, &s)| covariance::build(&CovarianceSpec::spiked_random(d, s, 1.0), Some(100 + l as u64)).unwrap())
            .collect();
        let ds = gen_regression(n, &covs, &noise, &DVector::from_element(d, 1.0), seed).unwrap();
        (covs, ds)
    }

    #[test]
    fn noiseless_interpolation() {
        let (_, ds) = fig1(30, 20, 1, [0.0; 3]);
        let fit = solve_ridge_multisource(&ds, 1e-10).unwrap();
        assert!((&fit.theta_hat - &ds.theta_star).amax() < 1e-6);
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let (_, ds) = fig1(30, 20, 1, [0.1, 0.2, 0.3]);
        let fit = solve_ridge_multisource(&ds, 1e10).unwrap();
        assert!(fit.theta_hat.norm() <= 1e-6);
    }

    #[test]
    fn ridge_matches_pgd_on_fig1_config() {
        let (_, ds) = fig1(100, 100, 7, [0.1, 0.2, 0.3]);
        let ridge = solve_ridge_multisource(&ds, 1.0).unwrap();
        assert!(ridge.meta.converged);
        let pgd = solve_separable_pgd(&ds, &[SeparableLoss::HalfSq], &SeparableLoss::HalfSq, 1.0, PgdOptions::default()).unwrap();
        assert!(pgd.meta.converged, "{:?}", pgd.meta);
        assert!((ridge.training_error - pgd.training_error).abs() <= 1e-6);
        assert!((&ridge.theta_hat - &pgd.theta_hat).amax() <= 1e-6);
    }

    #[test]
    fn pgd_trivial_cases() {
        let (_, mut ds) = fig1(5, 4, 1, [0.1; 3]);
        for x in ds.x.iter_mut() {
            x.fill(0.0);
        }
        for y in ds.y.iter_mut() {
            y.fill(0.0);
        }
        let fit = solve_separable_pgd(&ds, &[SeparableLoss::HalfSq], &SeparableLoss::HalfSq, 1.0, PgdOptions::default()).unwrap();
        assert_eq!(fit.theta_hat, DVector::zeros(5));

        let (_, ds) = fig1(5, 8, 2, [0.1; 3]);
        let single = RegressionDataset {
            k: 1,
            x: ds.x[..1].to_vec(),
            y: ds.y[..1].to_vec(),
            noise: ds.noise[..1].to_vec(),
            noise_sigmas: ds.noise_sigmas[..1].to_vec(),
            ..ds
        };
        let fit = solve_separable_pgd(&single, &[SeparableLoss::Abs], &SeparableLoss::Abs, 1e6, PgdOptions::default()).unwrap();
        assert_eq!(fit.theta_hat, DVector::zeros(5));
        let fit = solve_separable_pgd(&single, &[SeparableLoss::Abs], &SeparableLoss::HalfSq, 1e10, PgdOptions::default()).unwrap();
        assert!(fit.theta_hat.norm() <= 1e-6);
    }

    #[test]
    fn ridge_beats_truth_on_training_objective() {
        let (_, ds) = fig1(40, 30, 3, [0.1, 0.2, 0.3]);
        let lam = 0.3;
        let fit = solve_ridge_multisource(&ds, lam).unwrap();
        let h = [SeparableLoss::HalfSq];
        let at_hat = regression_objective(&ds, &h, &SeparableLoss::HalfSq, lam, &fit.theta_hat);
        let at_star = regression_objective(&ds, &h, &SeparableLoss::HalfSq, lam, &ds.theta_star);
        assert!(at_hat <= at_star);
    }

    #[test]
    fn gen_error_closed_form_cases() {
        let covs = vec![PsdMatrix::isotropic(4, 1.0).unwrap(), PsdMatrix::isotropic(4, 1.0).unwrap()];
        let ts = DVector::from_element(4, 2.0);
        let s = [0.3, 0.5];
        let base = (0.09 + 0.25) / 4.0;
        assert!((closed_form_gen_error(&ts, &ts, &covs, &s).unwrap() - base).abs() < 1e-15);
        let th = &ts + DVector::from_element(4, 1.0);
        let expected = (0.09 + 1.0 + 0.25 + 1.0) / 4.0;
        assert!((closed_form_gen_error(&th, &ts, &covs, &s).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn empirical_gen_error_brackets_closed_form() {
        let (covs, ds) = fig1(50, 60, 4, [0.1, 0.2, 0.3]);
        let fit = solve_ridge_multisource(&ds, 0.5).unwrap();
        let cf = closed_form_gen_error(&fit.theta_hat, &ds.theta_star, &covs, &ds.noise_sigmas).unwrap();
        let (m, se) = empirical_gen_error(&fit.theta_hat, &ds.theta_star, &covs, &ds.noise_sigmas, 10_000, 5).unwrap();
        assert!((m - cf).abs() <= 2.0 * se, "{m} ± {se} vs {cf}");
        // θ̂ = θ*: only noise remains.
        let (m, se) = empirical_gen_error(&ds.theta_star, &ds.theta_star, &covs, &ds.noise_sigmas, 10_000, 6).unwrap();
        let noise_only = (0.01 + 0.04 + 0.09) / 6.0;
        assert!((m - noise_only).abs() <= 2.0 * se);
    }

    fn fig2_like(d: usize, n: usize) -> GmmDataset {
        let (mu1, mu2) = gen_correlated_means(d, 0.8, 1).unwrap();
        let s1 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(d, 1.0, 0.5), Some(2)).unwrap());
        let s2 = Arc::new(covariance::build(&CovarianceSpec::spiked_random(d, 1.0, 0.5), Some(3)).unwrap());
        gen_gmm(n, &mu1, &mu2, s1, s2, 4).unwrap()
    }

    #[test]
    fn classifier_separable_means() {
        let d = 4;
        let z = Arc::new(PsdMatrix::isotropic(d, 0.0).unwrap());
        let mut e1 = DVector::zeros(d);
        e1[0] = 1.0;
        let ds = gen_gmm(6, &e1, &-&e1, z.clone(), z, 0).unwrap();
        let fit = solve_gmm_classifier(&ds, 1e-10).unwrap();
        assert!(fit.w_hat[0] > 0.0);
        assert!(fit.w_hat.rows(1, d - 1).amax() < 1e-12);
        let scores = &ds.data * &fit.w_hat;
        assert!(scores.iter().zip(ds.labels.iter()).all(|(s, z)| s * z > 0.0));
        let fit = solve_gmm_classifier(&ds, 1e10).unwrap();
        assert!(fit.w_hat.norm() <= 1e-6);
    }

    #[test]
    fn classifier_matches_gradient_oracle() {
        // Both primal (d < n) and dual (d > n) branches.
        for (d, n) in [(60, 100), (150, 100)] {
            let ds = fig2_like(d, n);
            let lam = 50.0;
            let fit = solve_gmm_classifier(&ds, lam).unwrap();
            assert!(fit.residual <= 1e-8 * ds.data.tr_mul(&ds.labels).norm());
            // Oracle: gradient descent on the strongly convex quadratic.
            let h = ds.data.tr_mul(&ds.data) * 2.0 + DMatrix::identity(d, d) * (2.0 * lam);
            let ev = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues;
            let step = 1.0 / ev.max();
            let mut w = DVector::zeros(d);
            for _ in 0..200_000 {
                let g = ds.data.tr_mul(&(&ds.data * &w - &ds.labels)) * 2.0 + &w * (2.0 * lam);
                if g.norm() < 1e-12 {
                    break;
                }
                w -= g * step;
            }
            let obj = classifier_objective(&ds, lam, &w);
            assert!((obj - fit.objective_value).abs() <= 1e-6 * obj.max(1.0), "{obj} vs {}", fit.objective_value);
        }
    }

    #[test]
    fn classification_error_cases() {
        let d = 100;
        let i = PsdMatrix::isotropic(d, 1.0).unwrap();
        let mut mu = DVector::zeros(d);
        mu[0] = 1.0;
        let mut w = DVector::zeros(d);
        w[1] = 1.0;
        assert!((classification_error(&w, &mu, &-&mu, &i, &i).unwrap() - 0.5).abs() < 1e-15);
        let mu = DVector::from_element(d, 1.0);
        let e = classification_error(&mu, &mu, &-&mu, &i, &i).unwrap();
        assert!((e - q_function(10.0)).abs() < 1e-30 && e < 1e-20);
        assert!(classification_error(&DVector::zeros(d), &mu, &mu, &i, &i).is_err());
        let z = PsdMatrix::isotropic(d, 0.0).unwrap();
        assert_eq!(classification_error(&mu, &mu, &-&mu, &z, &z).unwrap(), 0.0);
        let mut e1 = DVector::zeros(d);
        e1[0] = 1.0;
        assert!(matches!(classification_error(&w, &e1, &-&e1, &z, &z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn q_function_reference_values() {
        assert_eq!(q_function(0.0), 0.5);
        // Q(1), Q(3) and Q(10) from standard tables.
        for (x, q) in [(1.0, 0.158_655_253_931_457_05), (3.0, 1.349_898_031_630_094_6e-3), (10.0, 7.619_853_024_160_527e-24)] {
            assert!((q_function(x) - q).abs() <= 1e-12 * q, "Q({x}) = {}", q_function(x));
        }
    }

    #[test]
    fn classification_error_matches_monte_carlo() {
        let d = 50;
        let ds = fig2_like(d, 20);
        let w = rng::normal_vector(&mut rng::stream(8, "w", &[]), d);
        let p = classification_error(&w, &ds.mu1, &ds.mu2, &ds.sigma1, &ds.sigma2).unwrap();
        let (m, se) = empirical_classification_error(&w, &ds.mu1, &ds.mu2, &ds.sigma1, &ds.sigma2, 50_000, 9);
        assert!((m - p).abs() <= 3.0 * se, "{m} ± {se} vs {p}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn classification_error_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let d = 6;
            let mut r = rng::stream(seed, "prop", &[]);
            let w = rng::normal_vector(&mut r, d);
            let mu1 = rng::normal_vector(&mut r, d);
            let mu2 = rng::normal_vector(&mut r, d);
            let s = PsdMatrix::spiked(0.7, rng::normal_vector(&mut r, d)).unwrap();
            let a = classification_error(&w, &mu1, &mu2, &s, &s).unwrap();
            let b = classification_error(&(&w * c), &mu1, &mu2, &s, &s).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn ridge_and_pgd_agree(seed in 0u64..1000) {
            let mut r = rng::stream(seed, "prop.size", &[]);
            use rand::Rng;
            let d = r.random_range(2..40usize);
            let n = r.random_range(2..40usize);
            let lam = 10f64.powf(r.random_range(-1.0..1.0));
            let covs: Vec<PsdMatrix> = (0..2)
                .map(|l| PsdMatrix::spiked(0.5, rng::normal_vector(&mut rng::stream(seed, "prop.cov", &[l]), d)).unwrap())
                .collect();
            let ts = rng::normal_vector(&mut r, d);
            let ds = gen_regression(n, &covs, &[0.2, 0.4], &ts, seed).unwrap();
            let a = solve_ridge_multisource(&ds, lam).unwrap();
            let b = solve_separable_pgd(&ds, &[SeparableLoss::HalfSq], &SeparableLoss::HalfSq, lam, PgdOptions::default()).unwrap();
            prop_assert!((&a.theta_hat - &b.theta_hat).amax() <= 1e-6);
        }
    }
}
