//! Scalar auxiliary optimization for two-class ridge classification of a
//! Gaussian mixture.
//!
//! The classifier minimizes `‖Bw − z‖² + λ‖w‖²` over `n/2` samples from
//! `N(μ1, Σ1)` labelled `+1` and `n/2` from `N(μ2, Σ2)` labelled `−1`, with
//! mean entries standard normal and correlated by `r`. Writing
//! `b_i = nβ_i/4τ_i`, `u_i = nβ_iγ_i/4τ_i`, `T = λI + b_1Σ_1 + b_2Σ_2` and
//! `s = (+1, −1)`, the scalar problem is
//!
//! ```text
//! min_τ max_{β ≥ 0, γ}  −¼ [ (u_1² + u_2² + 2r u_1u_2) tr T⁻¹ + Σ_i β_i² tr(Σ_i T⁻¹) ]
//!                       + Σ_i [ β_iτ_i/2 − nβ_iγ_i²/16τ_i − nβ_iγ_i s_i/4τ_i − β_i²/4 ]
//! ```
//!
//! and the predicted error is `½Q((γ_1+2)/√(8τ_1²/n − γ_1²)) + ½Q((2−γ_2)/√(8τ_2²/n − γ_2²))`.
//! At the saddle `γ_i = 2(μ_iᵀw − s_i)` and `τ_i² = (n/2)(γ_i²/4 + wᵀΣ_iw)`.
//!
//! For fixed `(τ, β)` the objective is a concave quadratic in `γ` whose
//! maximizer solves `γ_i (1 + b_i tr T⁻¹) = −2s_i − r b_j γ_j tr T⁻¹`; the
//! inner maximization therefore runs over `β` only, with `γ` eliminated
//! exactly inside its search box.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::covariance::{JointFrame, PsdMatrix};
use crate::error::{Error, Result};
use crate::optim::{golden_section, CoordinateSearch};
use crate::po::{mean_stderr, q_function};
use crate::prox::{quad_matrix_envelope, MatrixScaledQuadEnvelope, SeparableLoss};
use crate::rng;

/// Label of class `i`.
pub const CLASS_SIGNS: [f64; 2] = [1.0, -1.0];

/// Fraction of the largest admissible `|γ_i| = 2√2 τ_i/√n` used as the search box.
pub const GAMMA_BOX_FRACTION: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoClassParams {
    pub tau: [f64; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
}

impl AoClassParams {
    fn check(&self) -> Result<()> {
        for i in 0..2 {
            if !(self.tau[i] > 0.0 && self.tau[i].is_finite()) {
                return Err(Error::domain(format!("tau_{} must be positive and finite, got {}", i + 1, self.tau[i])));
            }
            if !(self.beta[i] >= 0.0 && self.beta[i].is_finite()) {
                return Err(Error::domain(format!("beta_{} must be non-negative, got {}", i + 1, self.beta[i])));
            }
            if !self.gamma[i].is_finite() {
                return Err(Error::domain(format!("gamma_{} must be finite", i + 1)));
            }
        }
        Ok(())
    }
}

/// Variables of the general-loss objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoClassFullParams {
    pub tau: [f64; 2],
    pub beta: [f64; 2],
    /// `μ_iᵀw`
    pub gamma: [f64; 2],
    /// `‖Σ_i^{1/2} w‖`
    pub theta: [f64; 2],
    pub zeta: [f64; 2],
    pub eta: [f64; 2],
}

impl AoClassFullParams {
    /// The general variables matching a point of the squared-loss problem:
    /// `τ ↦ τ − β/2`, `γ ↦ γ/2 + s`, `θ² = 2τ²/n − γ²/4`, `ζ/θ = nβ/2τ` and
    /// `η = nβγ/4τ`. For `β_i ≤ 2τ_i` the general objective with squared loss
    /// and ridge regularizer then has the squared-loss objective as its mean.
    pub fn from_l2(p: &AoClassParams, n: usize) -> Result<Self> {
        p.check()?;
        let nf = n as f64;
        let mut out = Self {
            tau: [0.0; 2],
            beta: p.beta,
            gamma: [0.0; 2],
            theta: [0.0; 2],
            zeta: [0.0; 2],
            eta: [0.0; 2],
        };
        for i in 0..2 {
            let (t, b, g) = (p.tau[i], p.beta[i], p.gamma[i]);
            let theta_sq = 2.0 * t * t / nf - g * g / 4.0;
            if !(theta_sq > 0.0) {
                return Err(Error::domain(format!("class {}: 2τ²/n − γ²/4 = {theta_sq:e} is not positive", i + 1)));
            }
            if b > 2.0 * t {
                return Err(Error::domain(format!("class {}: beta exceeds 2 tau", i + 1)));
            }
            out.tau[i] = t - b / 2.0;
            out.gamma[i] = g / 2.0 + CLASS_SIGNS[i];
            out.theta[i] = theta_sq.sqrt();
            out.zeta[i] = nf * b * out.theta[i] / (2.0 * t);
            out.eta[i] = nf * b * g / (4.0 * t);
        }
        Ok(out)
    }
}

/// Class covariances.
#[derive(Debug, Clone)]
pub enum ClassModel {
    Dense { sigma1: Arc<PsdMatrix>, sigma2: Arc<PsdMatrix> },
    /// `Σ_i = σ_i² I + ν_iν_iᵀ` with `‖ν_i‖² = σ²d` and `ν_1 ⟂ ν_2`.
    Spiked { sigma1: f64, sigma2: f64, sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct ClassAoSpec {
    n: usize,
    d: usize,
    lambda: f64,
    r: f64,
    model: ClassModel,
    symmetry_reduction: bool,
    frame: Option<Arc<JointFrame>>,
}

impl ClassAoSpec {
    pub fn new(n: usize, d: usize, lambda: f64, r: f64, model: ClassModel) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::config(format!("number of samples must be even and positive, got {n}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be positive and finite, got {lambda}")));
        }
        if !(r.abs() <= 1.0) {
            return Err(Error::domain(format!("mean correlation must lie in [-1, 1], got {r}")));
        }
        let frame = match &model {
            ClassModel::Dense { sigma1, sigma2 } => {
                if sigma1.dim() != d || sigma2.dim() != d {
                    return Err(Error::shape(format!(
                        "covariances are {}x{} and {}x{}, expected dimension {d}",
                        sigma1.dim(),
                        sigma1.dim(),
                        sigma2.dim(),
                        sigma2.dim()
                    )));
                }
                Some(Arc::new(JointFrame::new(&[sigma1.as_ref(), sigma2.as_ref()], &[])?))
            }
            ClassModel::Spiked { sigma1, sigma2, sigma } => {
                if [sigma1, sigma2, sigma].iter().any(|s| !(**s >= 0.0 && s.is_finite())) {
                    return Err(Error::domain("spiked model parameters must be finite and non-negative"));
                }
                None
            }
        };
        Ok(Self {
            n,
            d,
            lambda,
            r,
            model,
            symmetry_reduction: true,
            frame,
        })
    }

    pub fn spiked(n: usize, d: usize, lambda: f64, r: f64, sigma1: f64, sigma2: f64, sigma: f64) -> Result<Self> {
        Self::new(n, d, lambda, r, ClassModel::Spiked { sigma1, sigma2, sigma })
    }

    pub fn dense(n: usize, lambda: f64, r: f64, sigma1: Arc<PsdMatrix>, sigma2: Arc<PsdMatrix>) -> Result<Self> {
        let d = sigma1.dim();
        Self::new(n, d, lambda, r, ClassModel::Dense { sigma1, sigma2 })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be positive and finite, got {lambda}")));
        }
        Ok(Self { lambda, ..self.clone() })
    }

    pub fn with_symmetry_reduction(mut self, on: bool) -> Self {
        self.symmetry_reduction = on;
        self
    }

    /// The same spiked spec with the spikes removed (`σ = 0`).
    pub fn isotropic_counterpart(&self) -> Result<Self> {
        match self.model {
            ClassModel::Spiked { sigma1, sigma2, .. } => Ok(Self {
                model: ClassModel::Spiked {
                    sigma1,
                    sigma2,
                    sigma: 0.0,
                },
                ..self.clone()
            }),
            ClassModel::Dense { .. } => Err(Error::config("the isotropic counterpart is defined for spiked models only")),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn model(&self) -> &ClassModel {
        &self.model
    }

    pub fn symmetry_reduction(&self) -> bool {
        self.symmetry_reduction
    }

    /// `(tr T⁻¹, [tr(Σ_1T⁻¹), tr(Σ_2T⁻¹)])` for `T = λI + b_1Σ_1 + b_2Σ_2`.
    fn traces(&self, b: [f64; 2]) -> Result<(f64, [f64; 2])> {
        match (&self.model, &self.frame) {
            (ClassModel::Dense { .. }, Some(frame)) => {
                let res = frame.resolvent(&b, self.lambda)?;
                Ok((res.trace(), [res.trace_member(0), res.trace_member(1)]))
            }
            (ClassModel::Spiked { sigma1, sigma2, sigma }, _) => {
                if self.d < 3 {
                    return Err(Error::domain(format!("spiked model needs d >= 3, got {}", self.d)));
                }
                let d = self.d as f64;
                let (s1, s2, spike) = (sigma1 * sigma1, sigma2 * sigma2, sigma * sigma * d);
                let bulk = self.lambda + b[0] * s1 + b[1] * s2;
                let on1 = bulk + b[0] * spike;
                let on2 = bulk + b[1] * spike;
                let t = (d - 2.0) / bulk + 1.0 / on1 + 1.0 / on2;
                let t1 = (d - 2.0) * s1 / bulk + (s1 + spike) / on1 + s1 / on2;
                let t2 = (d - 2.0) * s2 / bulk + s2 / on1 + (s2 + spike) / on2;
                Ok((t, [t1, t2]))
            }
            (ClassModel::Dense { .. }, None) => unreachable!("dense specs always carry a frame"),
        }
    }

    fn gamma_box(&self, tau: [f64; 2], fraction: Option<f64>) -> [f64; 2] {
        match fraction {
            Some(f) => {
                let c = f * 2.0 * std::f64::consts::SQRT_2 / (self.n as f64).sqrt();
                [c * tau[0], c * tau[1]]
            }
            None => [f64::INFINITY; 2],
        }
    }
}

fn objective_from_traces(spec: &ClassAoSpec, p: &AoClassParams, t: f64, ti: [f64; 2]) -> f64 {
    let n = spec.n as f64;
    let u = [
        n * p.beta[0] * p.gamma[0] / (4.0 * p.tau[0]),
        n * p.beta[1] * p.gamma[1] / (4.0 * p.tau[1]),
    ];
    let trace = (u[0] * u[0] + u[1] * u[1] + 2.0 * spec.r * u[0] * u[1]) * t
        + p.beta[0] * p.beta[0] * ti[0]
        + p.beta[1] * p.beta[1] * ti[1];
    let mut value = -0.25 * trace;
    for i in 0..2 {
        let (tau, beta, gamma) = (p.tau[i], p.beta[i], p.gamma[i]);
        value += beta * tau / 2.0 - n * beta * gamma * gamma / (16.0 * tau) - n * beta * gamma * CLASS_SIGNS[i] / (4.0 * tau)
            - beta * beta / 4.0;
    }
    value
}

fn weights(spec: &ClassAoSpec, tau: [f64; 2], beta: [f64; 2]) -> [f64; 2] {
    let n = spec.n as f64;
    [n * beta[0] / (4.0 * tau[0]), n * beta[1] / (4.0 * tau[1])]
}

/// Objective with traces taken over the dense covariances.
pub fn ao_class_objective_l2(spec: &ClassAoSpec, p: &AoClassParams) -> Result<f64> {
    if !matches!(spec.model, ClassModel::Dense { .. }) {
        return Err(Error::config("the dense objective needs a dense covariance model"));
    }
    ao_class_objective(spec, p)
}

/// Objective in closed form for the spiked model.
pub fn ao_class_objective_spiked(spec: &ClassAoSpec, p: &AoClassParams) -> Result<f64> {
    if !matches!(spec.model, ClassModel::Spiked { .. }) {
        return Err(Error::config("the spiked objective needs a spiked covariance model"));
    }
    ao_class_objective(spec, p)
}

/// Objective for either model.
pub fn ao_class_objective(spec: &ClassAoSpec, p: &AoClassParams) -> Result<f64> {
    p.check()?;
    let (t, ti) = spec.traces(weights(spec, p.tau, p.beta))?;
    Ok(objective_from_traces(spec, p, t, ti))
}

/// Maximizer of the objective over `γ` inside the search box, by exact
/// coordinate ascent on the concave quadratic. Returns `γ` and whether a box
/// constraint is active.
fn best_gamma(spec: &ClassAoSpec, tau: [f64; 2], b: [f64; 2], t: f64, fraction: Option<f64>) -> ([f64; 2], bool) {
    let bound = spec.gamma_box(tau, fraction);
    let mut g = [(-2.0 * CLASS_SIGNS[0]).clamp(-bound[0], bound[0]), (-2.0 * CLASS_SIGNS[1]).clamp(-bound[1], bound[1])];
    let mut active = [false; 2];
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..2 {
            let j = 1 - i;
            let free = (-2.0 * CLASS_SIGNS[i] - t * spec.r * b[j] * g[j]) / (1.0 + t * b[i]);
            let clamped = free.clamp(-bound[i], bound[i]);
            active[i] = clamped != free;
            moved = moved.max((clamped - g[i]).abs());
            g[i] = clamped;
        }
        if moved <= 1e-15 {
            break;
        }
    }
    (g, active[0] || active[1])
}

/// Objective at `(τ, β)` with `γ` maximized out.
fn value_at(spec: &ClassAoSpec, tau: [f64; 2], beta: [f64; 2], fraction: Option<f64>) -> Result<(f64, AoClassParams, bool)> {
    let b = weights(spec, tau, beta);
    let (t, ti) = spec.traces(b)?;
    let (gamma, active) = best_gamma(spec, tau, b, t, fraction);
    let p = AoClassParams { tau, beta, gamma };
    Ok((objective_from_traces(spec, &p, t, ti), p, active))
}

/// `½Q((γ_1+2)/√(8τ_1²/n − γ_1²)) + ½Q((2−γ_2)/√(8τ_2²/n − γ_2²))`
pub fn predicted_class_error(p: &AoClassParams, n: usize) -> Result<f64> {
    let nf = n as f64;
    let mut err = 0.0;
    for i in 0..2 {
        let radicand = 8.0 * p.tau[i] * p.tau[i] / nf - p.gamma[i] * p.gamma[i];
        if !(radicand > 0.0) {
            return Err(Error::domain(format!(
                "class {}: 8τ²/n − γ² = {radicand:e} is not positive",
                i + 1
            )));
        }
        err += 0.5 * q_function((2.0 + CLASS_SIGNS[i] * p.gamma[i]) / radicand.sqrt());
    }
    Ok(err)
}

/// `½Q(γ_1/θ_1) + ½Q(−γ_2/θ_2)` for the general variables.
pub fn predicted_class_error_general(p: &AoClassFullParams) -> Result<f64> {
    let mut err = 0.0;
    for i in 0..2 {
        if !(p.theta[i] > 0.0) {
            return Err(Error::domain(format!("class {}: theta must be positive", i + 1)));
        }
        err += 0.5 * q_function(CLASS_SIGNS[i] * p.gamma[i] / p.theta[i]);
    }
    Ok(err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoClassSolveConfig {
    /// Search box `|γ_i| ≤ fraction · 2√2 τ_i/√n` keeping the error radicand
    /// positive; `None` leaves `γ` unconstrained. The box can bind at very
    /// large `λ`, where the saddle approaches the radicand boundary.
    pub gamma_box: Option<f64>,
    /// Log-spaced `τ` grid points (per axis without the symmetry reduction).
    pub tau_points: usize,
    /// Grid range; defaults to `[1e-4, 2]·√(n/2)`.
    pub tau_range: Option<(f64, f64)>,
    /// Times the grid may be shifted by a decade when the best point sits on an edge.
    pub max_extensions: usize,
    /// Relative tolerance of the golden-section searches.
    pub tol: f64,
    /// Coordinate-ascent cycles over `(β_1, β_2)` without the symmetry reduction.
    pub max_cycles: usize,
}

impl Default for AoClassSolveConfig {
    fn default() -> Self {
        Self {
            gamma_box: Some(GAMMA_BOX_FRACTION),
            tau_points: 40,
            tau_range: None,
            max_extensions: 20,
            tol: 1e-11,
            max_cycles: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AoClassSolution {
    pub params: AoClassParams,
    pub objective: f64,
    pub predicted_error: f64,
    /// `(τ, max over β, γ)` at every grid point visited.
    pub grid: Vec<([f64; 2], f64)>,
    /// Whether a `γ` box constraint binds at the solution.
    pub gamma_box_active: bool,
    pub converged: bool,
}

/// Maximize over `β ≥ 0` (and `γ`) at fixed `τ`.
fn inner_max(spec: &ClassAoSpec, tau: [f64; 2], cfg: &AoClassSolveConfig, warm: Option<[f64; 2]>) -> (f64, AoClassParams, bool) {
    let n = spec.n as f64;
    let hi = [2.0 * tau[0] + n / tau[0], 2.0 * tau[1] + n / tau[1]];
    let neg = |beta: [f64; 2]| value_at(spec, tau, beta, cfg.gamma_box).map_or(f64::INFINITY, |v| -v.0);
    let mut beta;
    if spec.symmetry_reduction && tau[0] == tau[1] {
        let (b, _) = golden_section(|x| neg([x, x]), 0.0, hi[0], cfg.tol);
        beta = [b, b];
        let _ = warm;
    } else {
        beta = warm.unwrap_or([tau[0].min(hi[0]), tau[1].min(hi[1])]);
        for _ in 0..cfg.max_cycles {
            let old = beta;
            for i in 0..2 {
                let (b, _) = golden_section(
                    |x| {
                        let mut trial = beta;
                        trial[i] = x;
                        neg(trial)
                    },
                    0.0,
                    hi[i],
                    cfg.tol,
                );
                beta[i] = b;
            }
            let moved = (0..2).map(|i| (beta[i] - old[i]).abs() / (1.0 + beta[i])).fold(0.0, f64::max);
            if moved <= 10.0 * cfg.tol {
                break;
            }
        }
    }
    match value_at(spec, tau, beta, cfg.gamma_box) {
        Ok((v, p, active)) => (v, p, active),
        Err(_) => (
            f64::NAN,
            AoClassParams {
                tau,
                beta,
                gamma: [f64::NAN; 2],
            },
            false,
        ),
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Grid search over `τ` followed by golden-section refinement; the inner
/// maximization over `(β, γ)` runs at every `τ`. With the symmetry reduction
/// `τ_1 = τ_2`, `β_1 = β_2` and `γ_1 = −γ_2` (the last holds automatically
/// for equal `τ, β`); otherwise both `τ_i` are searched on a product grid and
/// refined by coordinate search in `log τ`.
pub fn solve_ao_class(spec: &ClassAoSpec, cfg: &AoClassSolveConfig) -> Result<AoClassSolution> {
    if cfg.tau_points < 3 {
        return Err(Error::config("the tau grid needs at least 3 points"));
    }
    let scale = (spec.n as f64 / 2.0).sqrt();
    let (mut lo, mut hi) = cfg.tau_range.unwrap_or((1e-4 * scale, 2.0 * scale));
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::config(format!("invalid tau range [{lo}, {hi}]")));
    }
    let mut visited = Vec::new();

    if spec.symmetry_reduction {
        let mut extensions = 0;
        let (grid, values, best) = loop {
            let grid = log_grid(lo, hi, cfg.tau_points);
            let values: Vec<f64> = grid.par_iter().map(|&t| inner_max(spec, [t, t], cfg, None).0).collect();
            visited.extend(grid.iter().zip(&values).map(|(&t, &v)| ([t, t], v)));
            let best = values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Solver(format!("inner maximization failed at every tau in [{lo:e}, {hi:e}]")))?;
            let shift = (hi / lo).ln() * 0.5;
            if best == 0 && extensions < cfg.max_extensions {
                lo = (lo.ln() - shift).exp();
                hi = (hi.ln() - shift).exp();
            } else if best == grid.len() - 1 && extensions < cfg.max_extensions {
                lo = (lo.ln() + shift).exp();
                hi = (hi.ln() + shift).exp();
            } else {
                break (grid, values, best);
            }
            extensions += 1;
        };
        let a = grid[best.saturating_sub(1)].ln();
        let b = grid[(best + 1).min(grid.len() - 1)].ln();
        let (lt, lv) = golden_section(
            |x| {
                let v = inner_max(spec, [x.exp(), x.exp()], cfg, None).0;
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            },
            a,
            b,
            cfg.tol,
        );
        let (tau, value) = if lv <= values[best] { (lt.exp(), lv) } else { (grid[best], values[best]) };
        let interior = best > 0 && best < grid.len() - 1;
        return finish(spec, [tau, tau], value, visited, interior, cfg);
    }

    let grid = log_grid(lo, hi, cfg.tau_points);
    let pairs: Vec<[f64; 2]> = grid.iter().flat_map(|&a| grid.iter().map(move |&b| [a, b])).collect();
    let values: Vec<f64> = pairs.par_iter().map(|&t| inner_max(spec, t, cfg, None).0).collect();
    visited.extend(pairs.iter().zip(&values).map(|(&t, &v)| (t, v)));
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Solver(format!("inner maximization failed at every tau pair in [{lo:e}, {hi:e}]²")))?;
    let step = (hi / lo).ln() / (cfg.tau_points - 1) as f64;
    let search = CoordinateSearch {
        initial_step: step,
        halvings: 40,
        max_sweeps: 2000,
        tol: cfg.tol,
    };
    let mut warm: Option<[f64; 2]> = None;
    let out = search.minimize(
        |x| {
            let (v, p, _) = inner_max(spec, [x[0].exp(), x[1].exp()], cfg, warm);
            if v.is_finite() {
                warm = Some(p.beta);
                v
            } else {
                f64::INFINITY
            }
        },
        &[pairs[best][0].ln(), pairs[best][1].ln()],
        &[(None, None), (None, None)],
    );
    let tau = [out.x[0].exp(), out.x[1].exp()];
    finish(spec, tau, out.value, visited, out.converged, cfg)
}

fn finish(
    spec: &ClassAoSpec,
    tau: [f64; 2],
    _value: f64,
    grid: Vec<([f64; 2], f64)>,
    converged: bool,
    cfg: &AoClassSolveConfig,
) -> Result<AoClassSolution> {
    let (objective, params, gamma_box_active) = inner_max(spec, tau, cfg, None);
    if !objective.is_finite() {
        return Err(Error::Solver(format!("inner maximization failed at the refined tau {tau:?}")));
    }
    let predicted_error = predicted_class_error(&params, spec.n)?;
    Ok(AoClassSolution {
        params,
        objective,
        predicted_error,
        grid,
        gamma_box_active,
        converged,
    })
}

/// Gaussian draws of one realization of the general objective.
#[derive(Debug, Clone)]
pub struct ClassDraws {
    /// `g_i ∈ R^d`
    pub g: [DVector<f64>; 2],
    /// `h_i ∈ R^{n/2}`
    pub h: [DVector<f64>; 2],
    pub mu: [DVector<f64>; 2],
}

impl ClassDraws {
    pub fn sample(spec: &ClassAoSpec, seed: u64, index: u64) -> Result<Self> {
        let (d, half) = (spec.d, spec.n / 2);
        let mut s = rng::stream(seed, "ao.class.draws", &[index]);
        let g = [rng::normal_vector(&mut s, d), rng::normal_vector(&mut s, d)];
        let h = [rng::normal_vector(&mut s, half), rng::normal_vector(&mut s, half)];
        let (mu1, mu2) = crate::data::gen_correlated_means(d, spec.r, rng::derive_u64(seed, "ao.class.means", &[index]))?;
        Ok(Self { g, h, mu: [mu1, mu2] })
    }
}

/// `M_{(τ/β)𝓛}(γ𝟙 − θh − s𝟙)`. At `β = 0` the envelope is the infimum of the
/// loss (zero for the built-in losses); at `τ = 0` it is the loss itself.
pub fn class_envelope_term(
    loss: &SeparableLoss,
    tau: f64,
    beta: f64,
    gamma: f64,
    theta: f64,
    h: &DVector<f64>,
    sign: f64,
) -> Result<f64> {
    if !(tau >= 0.0 && beta >= 0.0) {
        return Err(Error::domain(format!("envelope needs tau, beta >= 0, got {tau}, {beta}")));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    let v = h.map(|hj| gamma - theta * hj - sign);
    if tau == 0.0 {
        return Ok(loss.value(&v));
    }
    loss.envelope(tau / beta, &v)
}

/// One realization of the general-loss objective
///
/// ```text
/// min_w [λ f(w) + ½wᵀΣw − wᵀx] + Σ_i [ β_iτ_i/2 + M_{(τ_i/β_i)𝓛}(γ_i𝟙 − θ_ih_i − z_i) − θ_iζ_i/2 − η_iγ_i ]
/// ```
///
/// with `Σ = Σ_i (ζ_i/θ_i) Σ_i` and `x = Σ_i β_iΣ_i^{1/2}g_i − η_iμ_i`. The
/// bracket equals the matrix-scaled envelope of `f` at `Σ^{-1/2}x` minus
/// `½xᵀΣ⁻¹x`; only quadratic `f = c‖·‖²` is supported. Domains: `τ, β, θ,
/// ζ ≥ 0` (`θ > 0`), `γ, η` free.
pub fn ao_class_objective_general(
    spec: &ClassAoSpec,
    p: &AoClassFullParams,
    loss: &SeparableLoss,
    reg: &SeparableLoss,
    draws: &ClassDraws,
) -> Result<f64> {
    let (s1, s2) = match &spec.model {
        ClassModel::Dense { sigma1, sigma2 } => (sigma1, sigma2),
        ClassModel::Spiked { .. } => return Err(Error::config("the general objective needs a dense covariance model")),
    };
    let c = reg
        .quadratic_coefficient()
        .ok_or_else(|| Error::domain(format!("only quadratic regularizers are supported, got '{}'", reg.name())))?;
    for i in 0..2 {
        if !(p.theta[i] > 0.0 && p.zeta[i] >= 0.0 && p.tau[i] >= 0.0 && p.beta[i] >= 0.0) {
            return Err(Error::domain(format!(
                "class {}: need theta > 0 and tau, beta, zeta >= 0",
                i + 1
            )));
        }
    }
    let d = spec.d;
    let sigmas = [s1.as_ref(), s2.as_ref()];
    let mut metric = DMatrix::zeros(d, d);
    let mut x = DVector::zeros(d);
    for i in 0..2 {
        metric += sigmas[i].entries() * (p.zeta[i] / p.theta[i]);
        x += sigmas[i].principal_sqrt() * &draws.g[i] * p.beta[i] - &draws.mu[i] * p.eta[i];
    }
    let metric = PsdMatrix::from_dense(metric)?;
    if !(metric.min_eigenvalue() > 0.0) {
        return Err(Error::Singular {
            shift: 0.0,
            min_shifted: metric.min_eigenvalue(),
        });
    }
    let env = MatrixScaledQuadEnvelope {
        reg_lambda: 2.0 * spec.lambda * c,
        scale: metric,
        normalization: 1.0,
    };
    let (envelope, _) = quad_matrix_envelope(&env, &DVector::zeros(d), &(-&x))?;
    let mut value = envelope - 0.5 * x.dot(&env.scale.solve_shifted(0.0, &x)?);
    for i in 0..2 {
        value += p.beta[i] * p.tau[i] / 2.0
            + class_envelope_term(loss, p.tau[i], p.beta[i], p.gamma[i], p.theta[i], &draws.h[i], CLASS_SIGNS[i])?
            - p.theta[i] * p.zeta[i] / 2.0
            - p.eta[i] * p.gamma[i];
    }
    Ok(value)
}

/// Mean and standard error of the general objective over a draw collection.
pub fn ao_class_objective_general_mean(
    spec: &ClassAoSpec,
    p: &AoClassFullParams,
    loss: &SeparableLoss,
    reg: &SeparableLoss,
    draws: &[ClassDraws],
) -> Result<(f64, f64)> {
    let values = draws
        .iter()
        .map(|dr| ao_class_objective_general(spec, p, loss, reg, dr))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_stderr(&values))
}
