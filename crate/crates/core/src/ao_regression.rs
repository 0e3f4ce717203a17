//! Scalar auxiliary optimization for multi-source ridge regression.
//!
//! Variables per source `l`: `ξ_l, q_l` (minimized) and `β_l, r_l`
//! (maximized). With `A = (1/k) Σ_l (r_l/ξ_l) Σ_l`, `R = (λI + A)⁻¹` and the
//! half-squared loss/regularizer normalization `(1/nk)Σ½‖·‖² + (λ/2d)‖θ‖²`,
//! the concentrated objective is
//!
//! ```text
//! Σ_l [ β_l q_l/2k − ξ_l r_l/2k + β_l (σ_l² + ξ_l²) / (2k(β_l + q_l)) ]
//!   + (λ/2d) (‖θ*‖² − λ θ*ᵀRθ*) − (1/2nk²) Σ_l β_l² tr(Σ_l R).
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{JointFrame, PsdMatrix};
use crate::error::{Error, Result};
use crate::optim::{saddle_residual, CoordinateSearch};
use crate::prox::SeparableLoss;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AoRegressionParams {
    pub xi: Vec<f64>,
    pub q: Vec<f64>,
    pub beta: Vec<f64>,
    pub r: Vec<f64>,
}

impl AoRegressionParams {
    pub fn ones(k: usize) -> Self {
        Self {
            xi: vec![1.0; k],
            q: vec![1.0; k],
            beta: vec![1.0; k],
            r: vec![1.0; k],
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        let all = [&self.xi, &self.q, &self.beta, &self.r];
        if all.iter().any(|v| v.len() != k) {
            return Err(Error::shape(format!("every parameter block needs {k} entries")));
        }
        if all.iter().any(|v| v.iter().any(|x| !(*x >= 0.0 && x.is_finite()))) {
            return Err(Error::domain("parameters must be finite and non-negative"));
        }
        Ok(())
    }

    /// Min variables `(ξ, q)` followed by max variables `(β, r)`.
    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        ([self.xi.clone(), self.q.clone()].concat(), [self.beta.clone(), self.r.clone()].concat())
    }

    fn join(x: &[f64], y: &[f64]) -> Self {
        let k = x.len() / 2;
        Self {
            xi: x[..k].to_vec(),
            q: x[k..].to_vec(),
            beta: y[..k].to_vec(),
            r: y[k..].to_vec(),
        }
    }
}

/// Everything the regression AO depends on besides its scalar variables.
#[derive(Debug, Clone)]
pub struct AoRegressionProblem {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub noise_sigmas: Vec<f64>,
    covariances: Arc<Vec<PsdMatrix>>,
    theta_star: Arc<DVector<f64>>,
    frame: Arc<JointFrame>,
    theta_sq: f64,
}

impl AoRegressionProblem {
    pub fn new(
        n: usize,
        covariances: Vec<PsdMatrix>,
        noise_sigmas: Vec<f64>,
        theta_star: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let k = covariances.len();
        let d = theta_star.len();
        if k == 0 || noise_sigmas.len() != k {
            return Err(Error::config(format!("{} noise levels for {k} sources", noise_sigmas.len())));
        }
        if covariances.iter().any(|c| c.dim() != d) {
            return Err(Error::config("covariance dimensions must match theta_star"));
        }
        if n == 0 || d == 0 {
            return Err(Error::config("n and d must be positive"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("regularization must be positive, got {lambda}")));
        }
        let refs: Vec<&PsdMatrix> = covariances.iter().collect();
        let frame = JointFrame::new(&refs, &[&theta_star])?;
        Ok(Self {
            n,
            d,
            lambda,
            noise_sigmas,
            theta_sq: theta_star.norm_squared(),
            covariances: Arc::new(covariances),
            theta_star: Arc::new(theta_star),
            frame: Arc::new(frame),
        })
    }

    /// Same problem at a different regularization; shares all matrix data.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("regularization must be positive, got {lambda}")));
        }
        Ok(Self { lambda, ..self.clone() })
    }

    /// Same problem with a different number of samples per source.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("n must be positive"));
        }
        Ok(Self { n, ..self.clone() })
    }

    pub fn k(&self) -> usize {
        self.covariances.len()
    }

    pub fn covariances(&self) -> &[PsdMatrix] {
        &self.covariances
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// Frame weights `r_l / (k ξ_l)` of `A`.
    fn weights(&self, xi: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        let k = self.k() as f64;
        xi.iter()
            .zip(r)
            .map(|(&x, &rr)| {
                if x > 0.0 {
                    Ok(rr / (k * x))
                } else {
                    Err(Error::domain("xi must be strictly positive"))
                }
            })
            .collect()
    }
}

/// `A(r, ξ) = (1/k) Σ_l (r_l/ξ_l) Σ_l` as a dense PSD matrix.
pub fn build_a(problem: &AoRegressionProblem, params: &AoRegressionParams) -> Result<PsdMatrix> {
    params.check(problem.k())?;
    let w = problem.weights(&params.xi, &params.r)?;
    let mut a = DMatrix::zeros(problem.d, problem.d);
    for (c, wl) in problem.covariances.iter().zip(&w) {
        a += c.entries() * *wl;
    }
    PsdMatrix::from_dense(a)
}

fn envelope_ratio(beta: f64, q: f64) -> f64 {
    if beta == 0.0 {
        0.0
    } else {
        beta / (beta + q)
    }
}

/// Deterministic objective for half-squared losses and ridge.
pub fn ao_objective_concentrated_l2(problem: &AoRegressionProblem, params: &AoRegressionParams) -> Result<f64> {
    params.check(problem.k())?;
    let k = problem.k() as f64;
    let n = problem.n as f64;
    let d = problem.d as f64;
    let lam = problem.lambda;
    let w = problem.weights(&params.xi, &params.r)?;
    let res = problem.frame.resolvent(&w, lam)?;

    let mut value = 0.0;
    for l in 0..problem.k() {
        let (xi, q, b, r) = (params.xi[l], params.q[l], params.beta[l], params.r[l]);
        let s2 = problem.noise_sigmas[l].powi(2) + xi * xi;
        value += (b * q - xi * r + envelope_ratio(b, q) * s2) / (2.0 * k);
        if b != 0.0 {
            value -= b * b * res.trace_member(l) / (2.0 * n * k * k);
        }
    }
    value += lam / (2.0 * d) * (problem.theta_sq - lam * res.extra_quad(0, 0));
    Ok(value)
}

/// One set of Gaussian draws for [`ao_objective_sampled`]: per source, `g_l`
/// (length `d`), `h_l` and a noise proxy `e_l` (length `n`, scaled by `σ_l`).
#[derive(Debug, Clone)]
pub struct AoDraws {
    pub g: Vec<DVector<f64>>,
    pub h: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
}

impl AoDraws {
    pub fn sample(problem: &AoRegressionProblem, seed: u64, index: u64) -> Self {
        let mut s = rng::stream(seed, "ao.draws", &[index]);
        let k = problem.k();
        let g = (0..k).map(|_| rng::normal_vector(&mut s, problem.d)).collect();
        let h = (0..k).map(|_| rng::normal_vector(&mut s, problem.n)).collect();
        let noise = (0..k).map(|_| rng::normal_vector(&mut s, problem.n)).collect();
        Self { g, h, noise }
    }

    fn check(&self, problem: &AoRegressionProblem) -> Result<()> {
        let k = problem.k();
        if self.g.len() != k || self.h.len() != k || self.noise.len() != k {
            return Err(Error::config(format!("draws must cover {k} sources")));
        }
        if self.g.iter().any(|g| g.len() != problem.d) || self.h.iter().chain(&self.noise).any(|h| h.len() != problem.n) {
            return Err(Error::config("draw vectors have the wrong length"));
        }
        Ok(())
    }
}

/// `b = (1/k) √(d/n) Σ_l β_l Σ_l^{1/2} g_l`
pub fn build_b(problem: &AoRegressionProblem, beta: &[f64], g: &[DVector<f64>]) -> DVector<f64> {
    let k = problem.k() as f64;
    let scale = (problem.d as f64 / problem.n as f64).sqrt() / k;
    let mut b = DVector::zeros(problem.d);
    for ((c, &bl), gl) in problem.covariances.iter().zip(beta).zip(g) {
        if bl != 0.0 {
            b += c.principal_sqrt() * gl * (bl * scale);
        }
    }
    b
}

/// The scalarized objective evaluated on explicit Gaussian draws and
/// averaged over the draw set:
///
/// ```text
/// Σ_l [ β_l q_l/2k − ξ_l r_l/2k + (1/nk) M_{(q_l/β_l) ℓ_l}(σ_l e_l − ξ_l h_l) ]
///   − (1/2nk²) Σ_l β_l² tr(Σ_l A⁻¹) + (1/d) min_θ [ (λ/2)‖θ‖² + ½ (θ − x)ᵀA(θ − x) ]
/// ```
/// with `x = θ* − A⁻¹b`. For half-squared losses its expectation is the
/// concentrated objective.
pub fn ao_objective_sampled(
    problem: &AoRegressionProblem,
    params: &AoRegressionParams,
    losses: &[SeparableLoss],
    draws: &[AoDraws],
) -> Result<f64> {
    Ok(ao_objective_sampled_each(problem, params, losses, draws)?.iter().sum::<f64>() / draws.len() as f64)
}

/// Per-draw values of [`ao_objective_sampled`].
pub fn ao_objective_sampled_each(
    problem: &AoRegressionProblem,
    params: &AoRegressionParams,
    losses: &[SeparableLoss],
    draws: &[AoDraws],
) -> Result<Vec<f64>> {
    params.check(problem.k())?;
    if draws.is_empty() {
        return Err(Error::config("at least one draw set is required"));
    }
    let k_us = problem.k();
    if losses.len() != k_us && losses.len() != 1 {
        return Err(Error::config(format!("{} losses for {k_us} sources", losses.len())));
    }
    let loss_of = |l: usize| if losses.len() == 1 { &losses[0] } else { &losses[l] };
    let k = k_us as f64;
    let n = problem.n as f64;
    let d = problem.d as f64;
    let lam = problem.lambda;
    let w = problem.weights(&params.xi, &params.r)?;
    let a_inv = problem.frame.resolvent(&w, 0.0)?;
    let res = problem.frame.resolvent(&w, lam)?;

    let mut fixed = 0.0;
    for l in 0..k_us {
        let (xi, q, b, r) = (params.xi[l], params.q[l], params.beta[l], params.r[l]);
        fixed += (b * q - xi * r) / (2.0 * k);
        if b != 0.0 {
            fixed -= b * b * a_inv.trace_member(l) / (2.0 * n * k * k);
        }
    }

    let apply_a = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(problem.d);
        for (c, wl) in problem.covariances.iter().zip(&w) {
            out += c.apply(v) * *wl;
        }
        out
    };

    draws
        .iter()
        .map(|dr| {
            dr.check(problem)?;
            let mut v = fixed;
            for l in 0..k_us {
                let (xi, q, b) = (params.xi[l], params.q[l], params.beta[l]);
                if b == 0.0 {
                    continue;
                }
                let arg = &dr.noise[l] * problem.noise_sigmas[l] - &dr.h[l] * xi;
                let env = if q == 0.0 { 0.0 } else { loss_of(l).envelope(q / b, &arg)? };
                let env = if q == 0.0 { loss_of(l).value(&arg) } else { env };
                v += env / (n * k);
            }
            // min_θ (λ/2)‖θ‖² + ½(θ − x)ᵀA(θ − x) = (λ/2) xᵀ A R x.
            let b = build_b(problem, &params.beta, &dr.g);
            let x = problem.theta_star.as_ref() - a_inv.apply(&b);
            let ax = apply_a(&x);
            v += lam / (2.0 * d) * ax.dot(&res.apply(&x));
            Ok(v)
        })
        .collect()
}

/// `(1/2k) Σ_l (β_l/(β_l + q_l))² (σ_l² + ξ_l²)`
pub fn predict_train_error(problem: &AoRegressionProblem, params: &AoRegressionParams) -> Result<f64> {
    params.check(problem.k())?;
    let k = problem.k() as f64;
    Ok((0..problem.k())
        .map(|l| envelope_ratio(params.beta[l], params.q[l]).powi(2) * (problem.noise_sigmas[l].powi(2) + params.xi[l].powi(2)))
        .sum::<f64>()
        / (2.0 * k))
}

/// `(1/2k) Σ_l [σ_l² + (λ²/d) θ*ᵀRΣ_lRθ* + (1/nk²) Σ_m β_m² tr(Σ_m R Σ_l R)]`,
/// the expected generalization error of `θ̂ = R(Aθ* − b)` over `g`.
pub fn predict_gen_error(problem: &AoRegressionProblem, params: &AoRegressionParams) -> Result<f64> {
    params.check(problem.k())?;
    let k_us = problem.k();
    let (k, n, d, lam) = (k_us as f64, problem.n as f64, problem.d as f64, problem.lambda);
    let w = problem.weights(&params.xi, &params.r)?;
    let res = problem.frame.resolvent(&w, lam)?;
    let mut total = 0.0;
    for l in 0..k_us {
        let mut v = problem.noise_sigmas[l].powi(2) + lam * lam / d * res.extra_member_quad(0, l);
        for m in 0..k_us {
            let b = params.beta[m];
            if b != 0.0 {
                v += b * b * res.trace_member_pair(m, l) / (n * k * k);
            }
        }
        total += v;
    }
    Ok(total / (2.0 * k))
}

/// `θ̂_AO = (λI + A)⁻¹(Aθ* − b)` for one draw of `g`.
pub fn predict_theta_hat(problem: &AoRegressionProblem, params: &AoRegressionParams, g: &[DVector<f64>]) -> Result<DVector<f64>> {
    params.check(problem.k())?;
    if g.len() != problem.k() || g.iter().any(|v| v.len() != problem.d) {
        return Err(Error::config("one g draw of length d per source is required"));
    }
    let w = problem.weights(&params.xi, &params.r)?;
    let res = problem.frame.resolvent(&w, problem.lambda)?;
    let mut rhs = -build_b(problem, &params.beta, g);
    for (c, wl) in problem.covariances.iter().zip(&w) {
        rhs += c.apply(&problem.theta_star) * *wl;
    }
    Ok(res.apply(&rhs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoSolveConfig {
    /// Initial point of the first start; later starts are drawn log-uniformly around it.
    pub init: Option<AoRegressionParams>,
    pub floor: f64,
    pub search: CoordinateSearch,
    /// Initial log-step of the search when it starts from a stationary point.
    pub polish_step: f64,
    pub starts: usize,
    pub seed: u64,
    /// Coordinate perturbation and slack of the stationarity check.
    pub probe: f64,
    pub slack: f64,
}

impl Default for AoSolveConfig {
    fn default() -> Self {
        Self {
            init: None,
            floor: 1e-8,
            search: CoordinateSearch {
                initial_step: 0.5,
                halvings: 12,
                max_sweeps: 200,
                tol: 1e-7,
            },
            polish_step: 0.01,
            starts: 10,
            seed: 0,
            probe: 1e-3,
            slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AoRegressionSolution {
    pub params: AoRegressionParams,
    pub objective: f64,
    pub predicted_gen_error: f64,
    pub predicted_train_error: f64,
    pub predicted_theta_hat: Option<DVector<f64>>,
    /// Largest saddle violation under `±probe` coordinate moves.
    pub stationarity: f64,
    pub converged: bool,
    pub last_move: f64,
    /// Objective values reached by every start.
    pub start_objectives: Vec<f64>,
}

impl AoRegressionSolution {
    pub fn is_saddle(&self, slack: f64) -> bool {
        self.stationarity <= slack
    }
}

/// Objective after maximizing `β` and minimizing `q` in closed form:
/// `q_l = s_l − β_l`, `β_l = s_l / (1 + tr(Σ_l R)/nk)` with `s_l = √(σ_l² + ξ_l²)`.
fn reduced_objective(problem: &AoRegressionProblem, xi: &[f64], r: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k_us = problem.k();
    let (k, n, d, lam) = (k_us as f64, problem.n as f64, problem.d as f64, problem.lambda);
    let w = problem.weights(xi, r)?;
    let res = problem.frame.resolvent(&w, lam)?;
    let mut value = lam / (2.0 * d) * (problem.theta_sq - lam * res.extra_quad(0, 0));
    let mut beta = Vec::with_capacity(k_us);
    let mut q = Vec::with_capacity(k_us);
    for l in 0..k_us {
        let s = (problem.noise_sigmas[l].powi(2) + xi[l] * xi[l]).sqrt();
        let shrink = 1.0 + res.trace_member(l) / (n * k);
        value += -xi[l] * r[l] / (2.0 * k) + s * s / (2.0 * k * shrink);
        let b = s / shrink;
        beta.push(b);
        q.push(s - b);
    }
    Ok((value, beta, q))
}

/// Stationary point of the concentrated objective from its first-order
/// conditions. Writing `w_l = r_l/(kξ_l)` for the weights of `A`, stationarity
/// in `q, β, ξ, r` gives
///
/// ```text
/// β_l + q_l = s_l = √(σ_l² + ξ_l²),   w_l = 1 / (k (1 + tr(Σ_l R)/nk)),   β_l = k w_l s_l,
/// ξ_l² = (λ²/d) θ*ᵀRΣ_lRθ* + (1/n) Σ_m w_m² s_m² tr(Σ_m R Σ_l R),
/// ```
///
/// so `w` solves a monotone fixed point and `ξ²` a `k x k` linear system.
/// `w0` seeds the fixed-point iteration (defaults to `1/k`).
pub fn stationary_point(problem: &AoRegressionProblem, w0: Option<&[f64]>) -> Result<AoRegressionParams> {
    let k_us = problem.k();
    let (k, n, d, lam) = (k_us as f64, problem.n as f64, problem.d as f64, problem.lambda);
    let mut w: Vec<f64> = w0.map_or_else(|| vec![1.0 / k; k_us], |v| v.to_vec());
    if w.len() != k_us || w.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::domain("fixed-point seed must have k positive weights"));
    }
    let mut converged = false;
    for _ in 0..200_000 {
        let res = problem.frame.resolvent(&w, lam)?;
        let next: Vec<f64> = (0..k_us).map(|l| 1.0 / (k * (1.0 + res.trace_member(l) / (n * k)))).collect();
        let change = next.iter().zip(&w).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        w = next;
        if change < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Solver("weight fixed point did not converge".into()));
    }
    let res = problem.frame.resolvent(&w, lam)?;
    let mut sys = DMatrix::identity(k_us, k_us);
    let mut rhs = DVector::zeros(k_us);
    for l in 0..k_us {
        rhs[l] = lam * lam / d * res.extra_member_quad(0, l);
        for m in 0..k_us {
            let c = w[m] * w[m] * res.trace_member_pair(m, l) / n;
            rhs[l] += c * problem.noise_sigmas[m].powi(2);
            sys[(l, m)] -= c;
        }
    }
    let xi_sq = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("stationarity system for xi is singular".into()))?;
    if xi_sq.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Solver("stationarity system has no positive solution for xi".into()));
    }
    let mut params = AoRegressionParams::ones(k_us);
    for l in 0..k_us {
        let xi = xi_sq[l].sqrt();
        let s = (problem.noise_sigmas[l].powi(2) + xi_sq[l]).sqrt();
        params.xi[l] = xi;
        params.beta[l] = k * w[l] * s;
        params.q[l] = (s - params.beta[l]).max(0.0);
        params.r[l] = k * w[l] * xi;
    }
    Ok(params)
}

/// Saddle of the concentrated objective.
///
/// Each start seeds [`stationary_point`] (the first with `w = 1/k`, later ones
/// with deterministic random weights) and then refines by nested
/// derivative-free coordinate search in log coordinates: `q` and `β` are
/// optimized in closed form and the remaining `min_ξ max_r` problem is
/// searched directly. If the stationarity system has no valid solution the
/// search starts from `config.init` (default all ones) instead. The start
/// with the smallest saddle violation, probed on all four variable blocks,
/// is returned.
pub fn solve_ao_regression(problem: &AoRegressionProblem, config: &AoSolveConfig) -> Result<AoRegressionSolution> {
    let k = problem.k();
    let fallback = config.init.clone().unwrap_or_else(|| AoRegressionParams::ones(k));
    fallback.check(k)?;
    let floor = config.floor.max(f64::MIN_POSITIVE);
    let lo = floor.ln();
    let hi = (1.0 / floor).ln();
    let log_bounds = vec![(Some(lo), Some(hi)); k];
    let enc = |v: &[f64]| v.iter().map(|x| x.max(floor).ln()).collect::<Vec<_>>();
    let dec = |u: &[f64]| u.iter().map(|x| x.exp()).collect::<Vec<_>>();
    let value = |uxi: &[f64], ur: &[f64]| reduced_objective(problem, &dec(uxi), &dec(ur)).map_or(f64::NAN, |v| v.0);

    let raw_bounds = vec![(Some(0.0), None); 2 * k];
    let mut min_bounds = raw_bounds.clone();
    for b in min_bounds.iter_mut().take(k) {
        b.0 = Some(floor);
    }
    let full = |x: &[f64], y: &[f64]| ao_objective_concentrated_l2(problem, &AoRegressionParams::join(x, y)).unwrap_or(f64::NAN);

    // Refinement from a stationary point only needs to confirm it locally.
    let polish = CoordinateSearch {
        initial_step: config.polish_step,
        ..config.search
    };
    let same_point = |a: &AoRegressionParams, b: &AoRegressionParams| {
        let (ax, ay) = a.split();
        let (bx, by) = b.split();
        ax.iter()
            .chain(&ay)
            .zip(bx.iter().chain(&by))
            .all(|(u, v)| (u - v).abs() <= 1e-12 * u.abs().max(v.abs()))
    };
    let mut seen: Vec<(AoRegressionParams, f64)> = Vec::new();
    let mut best: Option<AoRegressionSolution> = None;
    let mut start_objectives = Vec::with_capacity(config.starts.max(1));
    for start in 0..config.starts.max(1) {
        let seed_w = (start > 0).then(|| {
            use rand::Rng;
            let mut s = rng::stream(config.seed, "ao.start", &[start as u64]);
            (0..k).map(|_| s.random_range(1e-3..1.0) / k as f64).collect::<Vec<_>>()
        });
        let (init, search) = match stationary_point(problem, seed_w.as_deref()) {
            Ok(p) => (p, polish),
            Err(_) => (fallback.clone(), config.search),
        };
        // Identical starting points give identical searches.
        if let Some((_, obj)) = seen.iter().find(|(p, _)| same_point(p, &init)) {
            start_objectives.push(*obj);
            continue;
        }
        let mut r_warm = enc(&init.r);
        let outer = search.minimize(
            |ux| {
                let inner = search.maximize(|uy| value(ux, uy), &r_warm, &log_bounds);
                r_warm = inner.x;
                inner.value
            },
            &enc(&init.xi),
            &log_bounds,
        );
        let uxi = outer.x.clone();
        let ur = search.maximize(|uy| value(&uxi, uy), &r_warm, &log_bounds).x;
        let (xi, r) = (dec(&uxi), dec(&ur));
        let (_, beta, q) = reduced_objective(problem, &xi, &r)?;
        let params = AoRegressionParams { xi, q, beta, r };
        let objective = ao_objective_concentrated_l2(problem, &params)?;
        start_objectives.push(objective);
        seen.push((init, objective));
        let (x, y) = params.split();
        let stationarity = saddle_residual(full, &x, &y, config.probe, &min_bounds, &raw_bounds);
        if best.as_ref().is_none_or(|b| stationarity < b.stationarity) {
            best = Some(AoRegressionSolution {
                predicted_gen_error: predict_gen_error(problem, &params)?,
                predicted_train_error: predict_train_error(problem, &params)?,
                predicted_theta_hat: None,
                params,
                objective,
                stationarity,
                converged: outer.converged,
                last_move: outer.last_move,
                start_objectives: Vec::new(),
            });
        }
    }
    let mut sol = best.expect("at least one start");
    sol.start_objectives = start_objectives;
    if !sol.stationarity.is_finite() {
        return Err(Error::Solver("regression AO objective is not finite at the returned point".into()));
    }
    Ok(sol)
}

/// Search-only saddle from an explicit starting point, without the
/// stationarity initialization.
pub fn search_saddle_from(problem: &AoRegressionProblem, init: &AoRegressionParams, search: &CoordinateSearch, floor: f64) -> Result<(AoRegressionParams, f64)> {
    let k = problem.k();
    init.check(k)?;
    let lo = floor.ln();
    let bounds = vec![(Some(lo), Some(-lo)); k];
    let dec = |u: &[f64]| u.iter().map(|x| x.exp()).collect::<Vec<_>>();
    let value = |uxi: &[f64], ur: &[f64]| reduced_objective(problem, &dec(uxi), &dec(ur)).map_or(f64::NAN, |v| v.0);
    let mut r_warm: Vec<f64> = init.r.iter().map(|x| x.max(floor).ln()).collect();
    let uxi0: Vec<f64> = init.xi.iter().map(|x| x.max(floor).ln()).collect();
    let outer = search.minimize(
        |ux| {
            let inner = search.maximize(|uy| value(ux, uy), &r_warm, &bounds);
            r_warm = inner.x;
            inner.value
        },
        &uxi0,
        &bounds,
    );
    let ur = search.maximize(|uy| value(&outer.x, uy), &r_warm, &bounds).x;
    let (xi, r) = (dec(&outer.x), dec(&ur));
    let (_, beta, q) = reduced_objective(problem, &xi, &r)?;
    let params = AoRegressionParams { xi, q, beta, r };
    let obj = ao_objective_concentrated_l2(problem, &params)?;
    Ok((params, obj))
}

/// Attach `θ̂_AO` for the given `g` draw to a solution.
pub fn with_theta_hat(problem: &AoRegressionProblem, mut sol: AoRegressionSolution, g: &[DVector<f64>]) -> Result<AoRegressionSolution> {
    sol.predicted_theta_hat = Some(predict_theta_hat(problem, &sol.params, g)?);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{self, CovarianceSpec};
    use crate::po;
    use crate::prox::{quad_matrix_envelope, MatrixScaledQuadEnvelope};
    use proptest::prelude::*;

    fn fig1_problem(d: usize, n: usize, lambda: f64) -> AoRegressionProblem {
        let covs: Vec<PsdMatrix> = [0.5, 0.7, 0.3]
            .iter()
            .enumerate()
            .map(|(l, &s)| covariance::build(&CovarianceSpec::spiked_random(d, s, 1.0), Some(10 + l as u64)).unwrap())
            .collect();
        AoRegressionProblem::new(n, covs, vec![0.1, 0.2, 0.3], DVector::from_element(d, 1.0), lambda).unwrap()
    }

    fn identity_problem(n: usize, d: usize, sigma: f64, theta: f64, lambda: f64) -> AoRegressionProblem {
        AoRegressionProblem::new(n, vec![PsdMatrix::isotropic(d, 1.0).unwrap()], vec![sigma], DVector::from_element(d, theta), lambda).unwrap()
    }

    #[test]
    fn build_a_examples() {
        let p = identity_problem(4, 3, 0.0, 1.0, 1.0);
        let a = build_a(&p, &AoRegressionParams::ones(1)).unwrap();
        assert!((a.entries() - DMatrix::identity(3, 3)).amax() < 1e-15);

        let i = PsdMatrix::isotropic(3, 1.0).unwrap();
        let p = AoRegressionProblem::new(4, vec![i.clone(), i], vec![0.0, 0.0], DVector::zeros(3), 1.0).unwrap();
        let params = AoRegressionParams {
            xi: vec![1.0, 2.0],
            q: vec![1.0; 2],
            beta: vec![1.0; 2],
            r: vec![2.0, 4.0],
        };
        let a = build_a(&p, &params).unwrap();
        assert!((a.entries() - DMatrix::identity(3, 3) * 2.0).amax() < 1e-15);
        let bad = AoRegressionParams { xi: vec![0.0, 1.0], ..params };
        assert!(matches!(build_a(&p, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn build_a_is_psd_for_random_specs() {
        let p = fig1_problem(20, 30, 1.0);
        let mut s = rng::stream(1, "t", &[]);
        use rand::Rng;
        for _ in 0..20 {
            let params = AoRegressionParams {
                xi: (0..3).map(|_| s.random_range(0.01..5.0)).collect(),
                q: vec![1.0; 3],
                beta: vec![1.0; 3],
                r: (0..3).map(|_| s.random_range(0.0..5.0)).collect(),
            };
            assert!(build_a(&p, &params).unwrap().min_eigenvalue() >= 0.0);
        }
    }

    #[test]
    fn null_coupling_reduces_to_linear_term() {
        let p = fig1_problem(10, 20, 0.7);
        let p = AoRegressionProblem::new(p.n, p.covariances().to_vec(), p.noise_sigmas.clone(), DVector::zeros(10), 0.7).unwrap();
        let params = AoRegressionParams {
            xi: vec![0.5, 1.0, 2.0],
            q: vec![0.3, 0.2, 0.1],
            beta: vec![0.0; 3],
            r: vec![1.0, 3.0, 0.5],
        };
        let v = ao_objective_concentrated_l2(&p, &params).unwrap();
        let expected: f64 = -(0.5 + 3.0 + 1.0) / 6.0;
        assert!((v - expected).abs() < 1e-15);
    }

    /// Standard single-source ridge AO with Σ = I, written out by hand:
    /// βq/2 − ξr/2 + β(σ² + ξ²)/(2(β+q)) + (λ/2)‖θ*‖²/d · r/ξ/(λ + r/ξ) − β² d/(2n(λ + r/ξ)).
    fn scalar_oracle(n: f64, d: f64, sigma: f64, theta_sq_over_d: f64, lam: f64, p: [f64; 4]) -> f64 {
        let [xi, q, b, r] = p;
        let a = r / xi;
        b * q / 2.0 - xi * r / 2.0 + b * (sigma * sigma + xi * xi) / (2.0 * (b + q)) + 0.5 * lam * theta_sq_over_d * a / (lam + a)
            - b * b * d / (2.0 * n * (lam + a))
    }

    #[test]
    fn scalar_collapse_at_unit_point() {
        let (n, d) = (7usize, 5usize);
        let p = identity_problem(n, d, 0.0, 1.0, 1.0);
        let v = ao_objective_concentrated_l2(&p, &AoRegressionParams::ones(1)).unwrap();
        // 1/4 + 1/4 − d/(4n)
        let hand = 0.5 - d as f64 / (4.0 * n as f64);
        assert!((v - hand).abs() < 1e-14, "{v} vs {hand}");
        assert!((v - scalar_oracle(n as f64, d as f64, 0.0, 1.0, 1.0, [1.0; 4])).abs() < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn identity_reduction_matches_scalar_oracle(
            xi in 0.01f64..5.0, q in 0.0f64..5.0, b in 0.0f64..5.0, r in 0.0f64..5.0,
            sigma in 0.0f64..1.0, lam in 0.01f64..10.0, n in 1usize..200, d in 1usize..50,
        ) {
            let p = identity_problem(n, d, sigma, 0.7, lam);
            let params = AoRegressionParams { xi: vec![xi], q: vec![q], beta: vec![b], r: vec![r] };
            let v = ao_objective_concentrated_l2(&p, &params).unwrap();
            let o = scalar_oracle(n as f64, d as f64, sigma, 0.49, lam, [xi, q, b, r]);
            prop_assert!((v - o).abs() <= 1e-10 * o.abs().max(1.0), "{} vs {}", v, o);
        }
    }

    #[test]
    fn concentrated_matches_dense_evaluation() {
        let p = fig1_problem(12, 15, 0.4);
        let params = AoRegressionParams {
            xi: vec![0.4, 0.9, 1.3],
            q: vec![0.2, 0.5, 0.8],
            beta: vec![1.1, 0.6, 0.3],
            r: vec![0.7, 1.5, 0.2],
        };
        let a = build_a(&p, &params).unwrap();
        let r = (a.entries() + DMatrix::identity(12, 12) * 0.4).try_inverse().unwrap();
        let ts = p.theta_star();
        let mut direct = 0.0;
        for l in 0..3 {
            let (xi, q, b, rr) = (params.xi[l], params.q[l], params.beta[l], params.r[l]);
            direct += (b * q - xi * rr + b / (b + q) * (p.noise_sigmas[l].powi(2) + xi * xi)) / 6.0;
            direct -= b * b * (p.covariances()[l].entries() * &r).trace() / (2.0 * 15.0 * 9.0);
        }
        direct += 0.4 / 24.0 * ts.dot(&(a.entries() * &r * ts));
        let v = ao_objective_concentrated_l2(&p, &params).unwrap();
        assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
    }

    #[test]
    fn sampled_envelope_vanishes_without_noise() {
        let p = identity_problem(6, 4, 0.0, 0.0, 1.0);
        let params = AoRegressionParams { xi: vec![1e-300], q: vec![1.0], beta: vec![1.0], r: vec![1.0] };
        let mut dr = AoDraws::sample(&p, 1, 0);
        dr.h[0].fill(0.0);
        dr.noise[0].fill(0.0);
        dr.g[0].fill(0.0);
        // With θ* = 0 and g = 0 only the scalar and trace terms remain.
        let v = ao_objective_sampled(&p, &params, &[SeparableLoss::HalfSq], &[dr]).unwrap();
        let a_inv_trace = 4.0 * 1e-300;
        let expected = 0.5 - 0.5e-300 - a_inv_trace / 12.0;
        assert!((v - expected).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sampled_single_draw_matches_direct_formula() {
        let (n, d) = (5usize, 3usize);
        let p = identity_problem(n, d, 0.3, 1.0, 0.8);
        let params = AoRegressionParams { xi: vec![0.6], q: vec![0.4], beta: vec![0.9], r: vec![1.2] };
        let dr = AoDraws::sample(&p, 2, 0);
        let v = ao_objective_sampled(&p, &params, &[SeparableLoss::HalfSq], std::slice::from_ref(&dr)).unwrap();
        // Σ = I: A = r/ξ I, b = √(d/n) β g.
        let a = 1.2 / 0.6;
        let arg = &dr.noise[0] * 0.3 - &dr.h[0] * 0.6;
        let env = 0.9 / (2.0 * (0.9 + 0.4)) * arg.norm_squared();
        let b = &dr.g[0] * ((d as f64 / n as f64).sqrt() * 0.9);
        let x = p.theta_star() - &b / a;
        let env_theta = MatrixScaledQuadEnvelope {
            reg_lambda: 0.8,
            scale: PsdMatrix::isotropic(d, a.sqrt()).unwrap(),
            normalization: 1.0 / d as f64,
        };
        let (theta_env, _) = quad_matrix_envelope(&env_theta, p.theta_star(), &b).unwrap();
        let direct = 0.9 * 0.4 / 2.0 - 0.6 * 1.2 / 2.0 + env / n as f64 - 0.81 * d as f64 / a / (2.0 * n as f64) + theta_env;
        assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
        let _ = x;
    }

    #[test]
    fn sampled_concentrates_on_deterministic_objective() {
        // One collection of 50 draw-sets shared by all 10 parameter points.
        let p = fig1_problem(20, 25, 0.6);
        let draws: Vec<AoDraws> = (0..50).map(|j| AoDraws::sample(&p, rng::DEFAULT_SEED, j)).collect();
        let mut s = rng::stream(rng::DEFAULT_SEED, "ao.points", &[]);
        use rand::Rng;
        for i in 0..10 {
            let params = AoRegressionParams {
                xi: (0..3).map(|_| s.random_range(0.2..2.0)).collect(),
                q: (0..3).map(|_| s.random_range(0.2..2.0)).collect(),
                beta: (0..3).map(|_| s.random_range(0.2..2.0)).collect(),
                r: (0..3).map(|_| s.random_range(0.2..2.0)).collect(),
            };
            let vals = ao_objective_sampled_each(&p, &params, &[SeparableLoss::HalfSq], &draws).unwrap();
            let (m, se) = po::mean_stderr(&vals);
            let c = ao_objective_concentrated_l2(&p, &params).unwrap();
            assert!((m - c).abs() <= 2.0 * se, "point {i}: {m} ± {se} vs {c}");
        }
    }

    #[test]
    fn gen_error_noise_floor_without_signal() {
        let p = fig1_problem(10, 20, 0.5);
        let p = AoRegressionProblem::new(p.n, p.covariances().to_vec(), p.noise_sigmas.clone(), DVector::zeros(10), 0.5).unwrap();
        let params = AoRegressionParams { beta: vec![0.0; 3], ..AoRegressionParams::ones(3) };
        let g = predict_gen_error(&p, &params).unwrap();
        assert!((g - (0.01 + 0.04 + 0.09) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn gen_error_matches_theta_plugin_oracle() {
        let p = fig1_problem(15, 20, 0.3);
        let params = AoRegressionParams {
            xi: vec![0.4, 0.9, 1.3],
            q: vec![0.2, 0.5, 0.8],
            beta: vec![1.1, 0.6, 0.3],
            r: vec![0.7, 1.5, 0.2],
        };
        let vals: Vec<f64> = (0..100)
            .map(|j| {
                let g = AoDraws::sample(&p, 77, j).g;
                let th = predict_theta_hat(&p, &params, &g).unwrap();
                po::closed_form_gen_error(&th, p.theta_star(), p.covariances(), &p.noise_sigmas).unwrap()
            })
            .collect();
        let (m, se) = po::mean_stderr(&vals);
        let pred = predict_gen_error(&p, &params).unwrap();
        assert!((m - pred).abs() <= 2.0 * se, "{m} ± {se} vs {pred}");
    }

    #[test]
    fn theta_hat_limits() {
        let p = fig1_problem(8, 10, 1e-12);
        let params = AoRegressionParams::ones(3);
        let zeros = vec![DVector::zeros(8); 3];
        let th = predict_theta_hat(&p, &params, &zeros).unwrap();
        assert!((&th - p.theta_star()).amax() < 1e-9);
        let p = p.with_lambda(1e12).unwrap();
        let g = AoDraws::sample(&p, 1, 0).g;
        assert!(predict_theta_hat(&p, &params, &g).unwrap().amax() < 1e-9);
    }

    #[test]
    fn solver_finds_a_saddle() {
        let p = fig1_problem(50, 100, 1.0);
        let sol = solve_ao_regression(&p, &AoSolveConfig::default()).unwrap();
        assert!(sol.is_saddle(1e-6), "{sol:?}");
        let spread = sol.start_objectives.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - sol.start_objectives.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread <= 1e-4, "{:?}", sol.start_objectives);
        // At the saddle the train error is below the gen error.
        assert!(sol.predicted_train_error < sol.predicted_gen_error);
    }

    #[test]
    fn reduced_search_agrees_with_full_nested_search() {
        // Single source: search all four variables directly.
        let p = identity_problem(30, 20, 0.3, 1.0, 0.5);
        let sol = solve_ao_regression(&p, &AoSolveConfig { starts: 1, ..Default::default() }).unwrap();
        let f = |x: &[f64], y: &[f64]| {
            let params = AoRegressionParams::join(&[x[0].exp(), x[1].exp()], &[y[0].exp(), y[1].exp()]);
            ao_objective_concentrated_l2(&p, &params).unwrap()
        };
        let cs = CoordinateSearch { halvings: 20, tol: 1e-9, max_sweeps: 500, ..Default::default() };
        let b = [(Some(-18.0), Some(18.0)), (Some(-18.0), Some(18.0))];
        let full = crate::optim::nested_saddle(f, &[0.0, 0.0], &[0.0, 0.0], &b, &b, &cs, &cs);
        assert!((full.value - sol.objective).abs() < 1e-6, "{} vs {}", full.value, sol.objective);
    }

    #[test]
    fn stationary_point_is_a_saddle_and_gen_error_identity_holds() {
        for lam in [0.01, 1.0, 100.0] {
            let p = fig1_problem(100, 100, lam);
            let params = stationary_point(&p, None).unwrap();
            let (x, y) = params.split();
            let full = |x: &[f64], y: &[f64]| ao_objective_concentrated_l2(&p, &AoRegressionParams::join(x, y)).unwrap();
            let b = vec![(Some(0.0), None); 6];
            assert!(saddle_residual(full, &x, &y, 1e-3, &b, &b) <= 1e-6);
            // At the saddle the predicted gen error is (1/2k) Σ (σ_l² + ξ_l²).
            let g = predict_gen_error(&p, &params).unwrap();
            let ident: f64 = (0..3).map(|l| p.noise_sigmas[l].powi(2) + params.xi[l].powi(2)).sum::<f64>() / 6.0;
            assert!((g - ident).abs() <= 1e-10 * g, "{g} vs {ident}");
        }
    }

    #[test]
    fn search_from_random_starts_agrees() {
        let p = fig1_problem(50, 100, 1.0);
        let reference = solve_ao_regression(&p, &AoSolveConfig { starts: 1, ..Default::default() }).unwrap();
        let search = CoordinateSearch { tol: 1e-4, halvings: 10, ..Default::default() };
        use rand::Rng;
        let mut s = rng::stream(rng::DEFAULT_SEED, "ao.random.starts", &[]);
        for _ in 0..10 {
            let mut init = AoRegressionParams::ones(3);
            for v in init.xi.iter_mut().chain(init.r.iter_mut()) {
                *v = 10f64.powf(s.random_range(-1.0..1.0));
            }
            let (_, obj) = search_saddle_from(&p, &init, &search, 1e-8).unwrap();
            assert!((obj - reference.objective).abs() <= 1e-4, "{obj} vs {}", reference.objective);
        }
    }

    #[test]
    fn noiseless_null_model_gen_error_vanishes() {
        let p = AoRegressionProblem::new(50, vec![PsdMatrix::isotropic(20, 1.0).unwrap()], vec![0.0], DVector::zeros(20), 1e-3).unwrap();
        let sol = solve_ao_regression(&p, &AoSolveConfig { starts: 2, ..Default::default() }).unwrap();
        assert!(sol.predicted_gen_error < 1e-6, "{sol:?}");
    }

    #[test]
    fn gen_error_non_increasing_in_n() {
        let base = fig1_problem(100, 50, 1.0);
        let mut prev = f64::INFINITY;
        for n in [50, 100, 200] {
            let p = base.with_n(n).unwrap();
            let sol = solve_ao_regression(&p, &AoSolveConfig { starts: 2, ..Default::default() }).unwrap();
            assert!(sol.predicted_gen_error <= prev + 1e-9, "n {n}: {} > {prev}", sol.predicted_gen_error);
            prev = sol.predicted_gen_error;
        }
    }
}
