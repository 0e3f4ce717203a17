//! Numerical checks of the comparison inequality behind the auxiliary
//! optimization.
//!
//! For blocks `ℓ = 1..k` with maps `α_ℓ(w)` (default `Σ_ℓ^{1/2}w`) and
//! `β_ℓ(v_ℓ)` (default `v_ℓ`), the primary process is
//! `X(w, v) = Σ_ℓ β_ℓᵀG_ℓα_ℓ + γ_ℓ‖α_ℓ‖‖β_ℓ‖` and the auxiliary process is
//! `Y(w, v) = Σ_ℓ ‖β_ℓ‖g_ℓᵀα_ℓ + ‖α_ℓ‖h_ℓᵀβ_ℓ`, with all of `G_ℓ, γ_ℓ, g_ℓ, h_ℓ`
//! standard Gaussian. Both have the same variance, and
//! `E[XX'] − E[YY'] = Σ_ℓ (β_ℓᵀβ'_ℓ − ‖β_ℓ‖‖β'_ℓ‖)(α_ℓᵀα'_ℓ − ‖α_ℓ‖‖α'_ℓ‖) ≥ 0`.
//! On finite sets this yields `P(min max X + ψ < t) ≤ 2^k P(min max Y + ψ < t)`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::PsdMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// A map applied to the points of block `ℓ`.
pub type PointMap = Arc<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `ψ(w, v)` with `v` given block by block.
pub type PsiFn = Arc<dyn Fn(&DVector<f64>, &[DVector<f64>]) -> f64 + Send + Sync>;

/// Largest exhaustive min-max enumeration accepted.
pub const MAX_PAIRS: usize = 1_000_000;

#[derive(Clone)]
pub enum Psi {
    Zero,
    /// `Σ_ℓ wᵀP_ℓv_ℓ + c_w‖w‖² − c_v‖v‖²`, convex-concave for `c_w, c_v ≥ 0`.
    Bilinear { p: Vec<DMatrix<f64>>, c_w: f64, c_v: f64 },
    Custom(PsiFn),
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psi::Zero => write!(f, "Zero"),
            Psi::Bilinear { c_w, c_v, .. } => write!(f, "Bilinear {{ c_w: {c_w}, c_v: {c_v} }}"),
            Psi::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Psi {
    pub fn eval(&self, w: &DVector<f64>, v: &[DVector<f64>]) -> f64 {
        match self {
            Psi::Zero => 0.0,
            Psi::Bilinear { p, c_w, c_v } => {
                let mut s = c_w * w.norm_squared();
                for (pl, vl) in p.iter().zip(v) {
                    s += w.dot(&(pl * vl)) - c_v * vl.norm_squared();
                }
                s
            }
            Psi::Custom(f) => f(w, v),
        }
    }

    /// `ψ(w, v) = ψ_w(w) + Σ_ℓ ψ_ℓ(w, v_ℓ)` when available.
    fn separable(&self) -> bool {
        !matches!(self, Psi::Custom(_))
    }

    fn w_part(&self, w: &DVector<f64>) -> f64 {
        match self {
            Psi::Bilinear { c_w, .. } => c_w * w.norm_squared(),
            _ => 0.0,
        }
    }

    fn block_part(&self, l: usize, w: &DVector<f64>, vl: &DVector<f64>) -> f64 {
        match self {
            Psi::Bilinear { p, c_v, .. } => w.dot(&(&p[l] * vl)) - c_v * vl.norm_squared(),
            _ => 0.0,
        }
    }
}

/// Finite primal and dual sets with the coupling and the block maps.
#[derive(Clone)]
pub struct MinMaxInstance {
    pub k: usize,
    pub d: usize,
    pub n_list: Vec<usize>,
    pub s_w: Vec<DVector<f64>>,
    pub s_v: Vec<Vec<DVector<f64>>>,
    pub psi: Psi,
    pub covariances: Vec<PsdMatrix>,
    pub alpha: Option<PointMap>,
    pub beta: Option<PointMap>,
}

impl fmt::Debug for MinMaxInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinMaxInstance")
            .field("k", &self.k)
            .field("d", &self.d)
            .field("n_list", &self.n_list)
            .field("w_points", &self.s_w.len())
            .field("v_points", &self.s_v.iter().map(Vec::len).collect::<Vec<_>>())
            .field("psi", &self.psi)
            .field("custom_alpha", &self.alpha.is_some())
            .field("custom_beta", &self.beta.is_some())
            .finish()
    }
}

/// Parameters of [`MinMaxInstance::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstance {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub w_points: usize,
    pub v_points: usize,
    pub with_psi: bool,
}

fn ball_point(r: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    let dir = rng::normal_vector(r, dim).normalize();
    let u: f64 = r.random();
    dir * (radius * u.powf(1.0 / dim as f64))
}

fn random_psd(r: &mut ChaCha8Rng, d: usize) -> Result<PsdMatrix> {
    let a = rng::normal_matrix(r, d, d);
    PsdMatrix::from_dense(&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1)
}

impl MinMaxInstance {
    /// Points uniform in unit balls, Wishart-plus-ridge covariances and (optionally) a random bilinear `ψ`.
    pub fn random(spec: &RandomInstance, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "checks.instance", &[]);
        let covariances = (0..spec.k).map(|_| random_psd(&mut r, spec.d)).collect::<Result<Vec<_>>>()?;
        let s_w = (0..spec.w_points).map(|_| ball_point(&mut r, spec.d, 1.0)).collect();
        let s_v = (0..spec.k)
            .map(|_| (0..spec.v_points).map(|_| ball_point(&mut r, spec.n, 1.0)).collect())
            .collect();
        let psi = if spec.with_psi {
            let p = (0..spec.k)
                .map(|_| rng::normal_matrix(&mut r, spec.d, spec.n) / (spec.d as f64).sqrt())
                .collect();
            Psi::Bilinear {
                p,
                c_w: r.random::<f64>(),
                c_v: r.random::<f64>(),
            }
        } else {
            Psi::Zero
        };
        let inst = Self {
            k: spec.k,
            d: spec.d,
            n_list: vec![spec.n; spec.k],
            s_w,
            s_v,
            psi,
            covariances,
            alpha: None,
            beta: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_list.len() != self.k || self.s_v.len() != self.k || self.covariances.len() != self.k {
            return Err(Error::config("instance needs k >= 1 and one dual set, size and covariance per block"));
        }
        if self.s_w.is_empty() || self.s_v.iter().any(Vec::is_empty) {
            return Err(Error::config("point sets must be non-empty"));
        }
        if self.s_w.iter().any(|w| w.len() != self.d) || self.covariances.iter().any(|c| c.dim() != self.d) {
            return Err(Error::shape(format!("primal points and covariances must have dimension {}", self.d)));
        }
        for (l, set) in self.s_v.iter().enumerate() {
            if set.iter().any(|v| v.len() != self.n_list[l]) {
                return Err(Error::shape(format!("dual points of block {l} must have length {}", self.n_list[l])));
            }
        }
        if let Psi::Bilinear { p, .. } = &self.psi {
            if p.len() != self.k || p.iter().zip(&self.n_list).any(|(m, &n)| m.shape() != (self.d, n)) {
                return Err(Error::shape("bilinear coupling needs one d x n_l matrix per block"));
            }
        }
        Ok(())
    }

    pub fn alpha_of(&self, l: usize, w: &DVector<f64>) -> DVector<f64> {
        match &self.alpha {
            Some(f) => f(l, w),
            None => self.covariances[l].principal_sqrt() * w,
        }
    }

    pub fn beta_of(&self, l: usize, v: &DVector<f64>) -> DVector<f64> {
        match &self.beta {
            Some(f) => f(l, v),
            None => v.clone(),
        }
    }

    /// `|S_w| · Π_ℓ |S_v,ℓ|`, saturating.
    pub fn pairs(&self) -> usize {
        self.s_v.iter().fold(self.s_w.len(), |acc, s| acc.saturating_mul(s.len()))
    }
}

fn check_tuple(inst: &MinMaxInstance, w: &DVector<f64>, v: &[DVector<f64>]) -> Result<()> {
    if w.len() != inst.d {
        return Err(Error::shape(format!("w has length {}, expected {}", w.len(), inst.d)));
    }
    if v.len() != inst.k || v.iter().zip(&inst.n_list).any(|(vl, &n)| vl.len() != n) {
        return Err(Error::shape("v must have one block of length n_l per block"));
    }
    Ok(())
}

/// `(E[X(w,v)X(w',v')], E[Y(w,v)Y(w',v')])` from the two covariance formulas.
pub fn process_covariances(
    inst: &MinMaxInstance,
    w: &DVector<f64>,
    w_prime: &DVector<f64>,
    v: &[DVector<f64>],
    v_prime: &[DVector<f64>],
) -> Result<(f64, f64)> {
    check_tuple(inst, w, v)?;
    check_tuple(inst, w_prime, v_prime)?;
    let (mut primary, mut aux) = (0.0, 0.0);
    for l in 0..inst.k {
        let (a, ap) = (inst.alpha_of(l, w), inst.alpha_of(l, w_prime));
        let (b, bp) = (inst.beta_of(l, &v[l]), inst.beta_of(l, &v_prime[l]));
        let (na, nap, nb, nbp) = (a.norm(), ap.norm(), b.norm(), bp.norm());
        // E[βᵀGα β'ᵀGα'] = (βᵀβ')(αᵀα'); the γ-term adds ‖α‖‖β‖‖α'‖‖β'‖.
        primary += b.dot(&bp) * a.dot(&ap) + na * nb * nap * nbp;
        aux += nb * nbp * a.dot(&ap) + na * nap * b.dot(&bp);
    }
    Ok((primary, aux))
}

/// `E[XX'] − E[YY']`; non-negative by Cauchy–Schwarz and zero when `w = w'` or `v = v'`.
pub fn covariance_gap(
    inst: &MinMaxInstance,
    w: &DVector<f64>,
    w_prime: &DVector<f64>,
    v: &[DVector<f64>],
    v_prime: &[DVector<f64>],
) -> Result<f64> {
    let (p, a) = process_covariances(inst, w, w_prime, v, v_prime)?;
    Ok(p - a)
}

/// The factored form of the gap, `Σ_ℓ (β_ℓᵀβ'_ℓ − ‖β_ℓ‖‖β'_ℓ‖)(α_ℓᵀα'_ℓ − ‖α_ℓ‖‖α'_ℓ‖)`.
pub fn covariance_gap_factored(
    inst: &MinMaxInstance,
    w: &DVector<f64>,
    w_prime: &DVector<f64>,
    v: &[DVector<f64>],
    v_prime: &[DVector<f64>],
) -> Result<f64> {
    check_tuple(inst, w, v)?;
    check_tuple(inst, w_prime, v_prime)?;
    Ok((0..inst.k)
        .map(|l| {
            let (a, ap) = (inst.alpha_of(l, w), inst.alpha_of(l, w_prime));
            let (b, bp) = (inst.beta_of(l, &v[l]), inst.beta_of(l, &v_prime[l]));
            (b.dot(&bp) - b.norm() * bp.norm()) * (a.dot(&ap) - a.norm() * ap.norm())
        })
        .sum())
}

/// `(E X², E Y²)` at one index pair.
pub fn variance_match(inst: &MinMaxInstance, w: &DVector<f64>, v: &[DVector<f64>]) -> Result<(f64, f64)> {
    process_covariances(inst, w, w, v, v)
}

/// Deliberate defects for checking that the harness notices violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// Report `−gap` from the covariance-gap sweep.
    GapSignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSweepReport {
    pub tuples: usize,
    pub min_gap: f64,
    /// Largest `|gap|` over tuples with `w = w'` or `v = v'`.
    pub max_gap_at_equal: f64,
    /// Largest `|E X² − E Y²| / max(E X², 1)`.
    pub max_variance_mismatch: f64,
    /// Largest difference between the covariance-difference and factored forms.
    pub max_form_mismatch: f64,
}

impl GapSweepReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.min_gap >= -tol && self.max_gap_at_equal <= tol && self.max_variance_mismatch <= tol && self.max_form_mismatch <= tol
    }
}

/// Smooth nonlinear block maps for the gap sweep.
fn random_maps(r: &mut ChaCha8Rng, k: usize, d: usize, n: usize) -> (PointMap, PointMap) {
    let mix: Vec<DMatrix<f64>> = (0..k).map(|_| rng::normal_matrix(r, d + 1, d) / (d as f64).sqrt()).collect();
    let shift: Vec<DVector<f64>> = (0..k).map(|_| rng::normal_vector(r, n)).collect();
    let alpha: PointMap = Arc::new(move |l, w| (&mix[l] * w).map(|x| x.tanh() + 0.3 * x));
    let beta: PointMap = Arc::new(move |l, v| v.zip_map(&shift[l], |x, s| (x + s).sin() + x * x * x / 3.0));
    (alpha, beta)
}

/// Evaluate the gap on `tuples` random tuples across random instances (half
/// of them with nonlinear `α, β`), plus the equal-index and variance checks.
pub fn gap_sweep(tuples: usize, seed: u64, fault: Fault) -> Result<GapSweepReport> {
    let per_instance = 100;
    let instances = tuples.div_ceil(per_instance).max(1);
    let results = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<(usize, f64, f64, f64, f64)> {
            let mut r = rng::stream(seed, "checks.gap", &[i as u64]);
            let k = 1 + r.random_range(0..3usize);
            let d = 1 + r.random_range(0..5usize);
            let n = 1 + r.random_range(0..5usize);
            let mut inst = MinMaxInstance::random(
                &RandomInstance {
                    k,
                    d,
                    n,
                    w_points: 1,
                    v_points: 1,
                    with_psi: false,
                },
                rng::derive_u64(seed, "checks.gap.instance", &[i as u64]),
            )?;
            if i % 2 == 1 {
                let (a, b) = random_maps(&mut r, k, d, n);
                inst.alpha = Some(a);
                inst.beta = Some(b);
            }
            let count = per_instance.min(tuples - (i * per_instance).min(tuples)).max(if tuples == 0 { 0 } else { 1 });
            let (mut min_gap, mut at_equal, mut var_mis, mut form_mis) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
            for _ in 0..count {
                let w = rng::normal_vector(&mut r, d);
                let wp = rng::normal_vector(&mut r, d);
                let v: Vec<_> = (0..k).map(|_| rng::normal_vector(&mut r, n)).collect();
                let vp: Vec<_> = (0..k).map(|_| rng::normal_vector(&mut r, n)).collect();
                let mut gap = covariance_gap(&inst, &w, &wp, &v, &vp)?;
                if fault == Fault::GapSignFlip {
                    gap = -gap;
                }
                min_gap = min_gap.min(gap);
                let factored = covariance_gap_factored(&inst, &w, &wp, &v, &vp)?;
                let (p, a) = process_covariances(&inst, &w, &wp, &v, &vp)?;
                form_mis = form_mis.max((gap.abs() - factored.abs()).abs() / p.abs().max(a.abs()).max(1.0));
                at_equal = at_equal
                    .max(covariance_gap(&inst, &w, &w, &v, &vp)?.abs())
                    .max(covariance_gap(&inst, &w, &wp, &v, &v)?.abs());
                let (ex2, ey2) = variance_match(&inst, &w, &v)?;
                var_mis = var_mis.max((ex2 - ey2).abs() / ex2.max(1.0));
            }
            Ok((count, min_gap, at_equal, var_mis, form_mis))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = GapSweepReport {
        tuples: 0,
        min_gap: f64::INFINITY,
        max_gap_at_equal: 0.0,
        max_variance_mismatch: 0.0,
        max_form_mismatch: 0.0,
    };
    for (c, g, e, v, f) in results {
        report.tuples += c;
        report.min_gap = report.min_gap.min(g);
        report.max_gap_at_equal = report.max_gap_at_equal.max(e);
        report.max_variance_mismatch = report.max_variance_mismatch.max(v);
        report.max_form_mismatch = report.max_form_mismatch.max(f);
    }
    Ok(report)
}

/// One row of the Monte-Carlo comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub t: f64,
    /// `P̂(Φ < t)` for the primary min-max.
    pub p_phi_hat: f64,
    pub p_phi_stderr: f64,
    /// `2^k P̂(φ < t)` for the auxiliary min-max.
    pub p_ao_scaled: f64,
    pub p_ao_stderr: f64,
    /// `(P̂(Φ<t) − 2^k P̂(φ<t)) / combined stderr`; positive values are excesses.
    pub violation_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub k: usize,
    pub trials: usize,
    pub rows: Vec<McRow>,
}

impl McReport {
    /// Every row satisfies `P̂(Φ<t) ≤ 2^k P̂(φ<t) + sigmas · stderr`.
    pub fn passed(&self, sigmas: f64) -> bool {
        self.rows.iter().all(|r| r.violation_sigma <= sigmas)
    }

    pub fn max_violation_sigma(&self) -> f64 {
        self.rows.iter().map(|r| r.violation_sigma).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cached images of the point sets under `α` and `β`.
struct Images {
    alpha: Vec<Vec<DVector<f64>>>,
    alpha_norm: Vec<Vec<f64>>,
    beta: Vec<Vec<DVector<f64>>>,
    beta_norm: Vec<Vec<f64>>,
    /// Separable `ψ`: `ψ_w[w]` and `ψ_ℓ[w][j]`; otherwise the full table over `(w, product index)`.
    psi_w: Vec<f64>,
    psi_blocks: Vec<Vec<Vec<f64>>>,
    psi_full: Option<Vec<Vec<f64>>>,
}

fn product_index(radices: &[usize], mut idx: usize, out: &mut [usize]) {
    for (slot, &r) in out.iter_mut().zip(radices) {
        *slot = idx % r;
        idx /= r;
    }
}

impl Images {
    fn new(inst: &MinMaxInstance) -> Self {
        let alpha: Vec<Vec<DVector<f64>>> =
            (0..inst.k).map(|l| inst.s_w.iter().map(|w| inst.alpha_of(l, w)).collect()).collect();
        let beta: Vec<Vec<DVector<f64>>> =
            (0..inst.k).map(|l| inst.s_v[l].iter().map(|v| inst.beta_of(l, v)).collect()).collect();
        let alpha_norm = alpha.iter().map(|b| b.iter().map(|a| a.norm()).collect()).collect();
        let beta_norm = beta.iter().map(|b| b.iter().map(|a| a.norm()).collect()).collect();
        let (psi_w, psi_blocks, psi_full) = if inst.psi.separable() {
            (
                inst.s_w.iter().map(|w| inst.psi.w_part(w)).collect(),
                (0..inst.k)
                    .map(|l| {
                        inst.s_w
                            .iter()
                            .map(|w| inst.s_v[l].iter().map(|v| inst.psi.block_part(l, w, v)).collect())
                            .collect()
                    })
                    .collect(),
                None,
            )
        } else {
            let radices: Vec<usize> = inst.s_v.iter().map(Vec::len).collect();
            let combos: usize = radices.iter().product();
            let mut idx = vec![0; inst.k];
            let table = inst
                .s_w
                .iter()
                .map(|w| {
                    (0..combos)
                        .map(|c| {
                            product_index(&radices, c, &mut idx);
                            let v: Vec<DVector<f64>> = idx.iter().enumerate().map(|(l, &j)| inst.s_v[l][j].clone()).collect();
                            inst.psi.eval(w, &v)
                        })
                        .collect()
                })
                .collect();
            (Vec::new(), Vec::new(), Some(table))
        };
        Self {
            alpha,
            alpha_norm,
            beta,
            beta_norm,
            psi_w,
            psi_blocks,
            psi_full,
        }
    }

    /// `min_w max_v Σ_ℓ terms[ℓ][w][j_ℓ] + ψ(w, v)`.
    fn min_max(&self, inst: &MinMaxInstance, terms: &[Vec<Vec<f64>>]) -> f64 {
        let nw = inst.s_w.len();
        let mut best = f64::INFINITY;
        match &self.psi_full {
            None => {
                for wi in 0..nw {
                    let mut val = self.psi_w[wi];
                    for l in 0..inst.k {
                        let row = &terms[l][wi];
                        let ps = &self.psi_blocks[l][wi];
                        val += row.iter().zip(ps).map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
                    }
                    best = best.min(val);
                }
            }
            Some(table) => {
                let radices: Vec<usize> = inst.s_v.iter().map(Vec::len).collect();
                let mut idx = vec![0; inst.k];
                for (wi, psi_row) in table.iter().enumerate() {
                    let mut inner = f64::NEG_INFINITY;
                    for (c, p) in psi_row.iter().enumerate() {
                        product_index(&radices, c, &mut idx);
                        let s: f64 = idx.iter().enumerate().map(|(l, &j)| terms[l][wi][j]).sum::<f64>() + p;
                        inner = inner.max(s);
                    }
                    best = best.min(inner);
                }
            }
        }
        best
    }

    /// One trial: `(Φ, φ)`.
    fn sample(&self, inst: &MinMaxInstance, r: &mut ChaCha8Rng) -> (f64, f64) {
        let mut prim = Vec::with_capacity(inst.k);
        let mut aux = Vec::with_capacity(inst.k);
        for l in 0..inst.k {
            let adim = self.alpha[l][0].len();
            let bdim = self.beta[l][0].len();
            let g_mat = rng::normal_matrix(r, bdim, adim);
            let gamma = rng::normal(r);
            let g = rng::normal_vector(r, adim);
            let h = rng::normal_vector(r, bdim);
            let hb: Vec<f64> = self.beta[l].iter().map(|b| h.dot(b)).collect();
            let mut pl = Vec::with_capacity(inst.s_w.len());
            let mut al = Vec::with_capacity(inst.s_w.len());
            for (a, &na) in self.alpha[l].iter().zip(&self.alpha_norm[l]) {
                let ga = &g_mat * a;
                let gta = g.dot(a);
                pl.push(
                    self.beta[l]
                        .iter()
                        .zip(&self.beta_norm[l])
                        .map(|(b, &nb)| b.dot(&ga) + gamma * na * nb)
                        .collect::<Vec<f64>>(),
                );
                al.push(self.beta_norm[l].iter().zip(&hb).map(|(&nb, &hv)| nb * gta + na * hv).collect::<Vec<f64>>());
            }
            prim.push(pl);
            aux.push(al);
        }
        (self.min_max(inst, &prim), self.min_max(inst, &aux))
    }
}

/// Draw `trials` independent `(Φ, φ)` pairs by exhaustive enumeration.
pub fn sample_min_max(inst: &MinMaxInstance, trials: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    inst.validate()?;
    if inst.pairs() > MAX_PAIRS {
        return Err(Error::config(format!(
            "exhaustive enumeration needs {} pairs, budget is {MAX_PAIRS}",
            inst.pairs()
        )));
    }
    let images = Images::new(inst);
    Ok((0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, "checks.mc", &[t as u64]);
            images.sample(inst, &mut r)
        })
        .collect())
}

fn binomial_stderr(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Monte-Carlo estimate of both sides of `P(Φ < t) ≤ 2^k P(φ < t)` on a `t` grid.
pub fn mc_gcgmt_inequality(inst: &MinMaxInstance, t_grid: &[f64], trials: usize, seed: u64) -> Result<McReport> {
    if trials == 0 || t_grid.is_empty() {
        return Err(Error::config("need at least one trial and one threshold"));
    }
    let samples = sample_min_max(inst, trials, seed)?;
    let scale = 2f64.powi(inst.k as i32);
    let rows = t_grid
        .iter()
        .map(|&t| {
            let below_phi = samples.iter().filter(|s| s.0 < t).count() as f64 / trials as f64;
            let below_ao = samples.iter().filter(|s| s.1 < t).count() as f64 / trials as f64;
            let se_phi = binomial_stderr(below_phi, trials);
            let se_ao = scale * binomial_stderr(below_ao, trials);
            let excess = below_phi - scale * below_ao;
            let combined = (se_phi * se_phi + se_ao * se_ao).sqrt();
            let violation_sigma = if combined > 0.0 {
                excess / combined
            } else if excess > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            McRow {
                t,
                p_phi_hat: below_phi,
                p_phi_stderr: se_phi,
                p_ao_scaled: scale * below_ao,
                p_ao_stderr: se_ao,
                violation_sigma,
            }
        })
        .collect();
    Ok(McReport { k: inst.k, trials, rows })
}

/// `points` equally spaced thresholds between the 0.5% and 99.5% quantiles of
/// a pilot sample of both min-max values.
pub fn pilot_t_grid(inst: &MinMaxInstance, points: usize, pilot_trials: usize, seed: u64) -> Result<Vec<f64>> {
    let samples = sample_min_max(inst, pilot_trials.max(10), rng::derive_u64(seed, "checks.pilot", &[]))?;
    let mut all: Vec<f64> = samples.iter().flat_map(|s| [s.0, s.1]).collect();
    all.sort_by(f64::total_cmp);
    let q = |p: f64| all[((all.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (q(0.005), q(0.995));
    if points < 2 {
        return Ok(vec![(lo + hi) / 2.0]);
    }
    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect())
}

/// Compact instance for the Lipschitz and concentration checks: `w` ranges
/// over a net of the ball of radius `r_w`, `v = (v_1..v_k)` over the full
/// ball of radius `r_v`, and
/// `ψ(w, v) = c_w‖w‖² + qᵀw − Σ_ℓ y_ℓᵀv_ℓ − c_v‖v‖²`. The inner maximum over
/// the `v`-ball is solved in closed form.
#[derive(Debug, Clone)]
pub struct CompactInstance {
    pub covariances: Vec<PsdMatrix>,
    pub n_list: Vec<usize>,
    pub r_w: f64,
    pub r_v: f64,
    pub c_w: f64,
    pub c_v: f64,
    pub q: DVector<f64>,
    pub y: Vec<DVector<f64>>,
    pub w_net: Vec<DVector<f64>>,
}

impl CompactInstance {
    /// Net of `net_points` uniform points in the `w`-ball plus the origin and
    /// `net_points` points on its sphere.
    pub fn new(
        covariances: Vec<PsdMatrix>,
        n_list: Vec<usize>,
        r_w: f64,
        r_v: f64,
        net_points: usize,
        seed: u64,
    ) -> Result<Self> {
        let k = covariances.len();
        if k == 0 || n_list.len() != k {
            return Err(Error::config("compact instance needs one dual size per covariance"));
        }
        if !(r_w > 0.0 && r_v > 0.0) {
            return Err(Error::domain("ball radii must be positive"));
        }
        let d = covariances[0].dim();
        if covariances.iter().any(|c| c.dim() != d) {
            return Err(Error::shape("covariances must share one dimension"));
        }
        let mut r = rng::stream(seed, "checks.compact", &[]);
        let mut w_net = vec![DVector::zeros(d)];
        for _ in 0..net_points {
            w_net.push(ball_point(&mut r, d, r_w));
            w_net.push(rng::normal_vector(&mut r, d).normalize() * r_w);
        }
        let q = rng::normal_vector(&mut r, d);
        let y = n_list.iter().map(|&n| rng::normal_vector(&mut r, n) * 0.5).collect();
        Ok(Self {
            covariances,
            n_list,
            r_w,
            r_v,
            c_w: 0.5,
            c_v: 0.0,
            q,
            y,
            w_net,
        })
    }

    pub fn k(&self) -> usize {
        self.covariances.len()
    }

    pub fn d(&self) -> usize {
        self.covariances[0].dim()
    }

    /// `σ√2 R_w R_v` with `σ = max_ℓ ‖Σ_ℓ^{1/2}‖`.
    pub fn lipschitz_bound(&self) -> f64 {
        let sigma = self.covariances.iter().map(PsdMatrix::sqrt_op_norm).fold(0.0, f64::max);
        sigma * std::f64::consts::SQRT_2 * self.r_w * self.r_v
    }

    /// Draw `(g, h)`.
    pub fn draw(&self, r: &mut ChaCha8Rng) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let g = (0..self.k()).map(|_| rng::normal_vector(r, self.d())).collect();
        let h = self.n_list.iter().map(|&n| rng::normal_vector(r, n)).collect();
        (g, h)
    }

    /// `φ(g, h) = min_{w ∈ net} max_{‖v‖ ≤ R_v} Σ_ℓ ‖v_ℓ‖g_ℓᵀα_ℓ + ‖α_ℓ‖h_ℓᵀv_ℓ + ψ(w, v)`.
    ///
    /// For fixed `w` and `‖v_ℓ‖ = ρ_ℓ`, the best direction of `v_ℓ` is along
    /// `u_ℓ = ‖α_ℓ‖h_ℓ − y_ℓ`, leaving `max Σ_ℓ ρ_ℓe_ℓ − c_vΣρ_ℓ²` over the
    /// non-negative part of the `R_v`-ball with `e_ℓ = g_ℓᵀα_ℓ + ‖u_ℓ‖`.
    pub fn phi(&self, g: &[DVector<f64>], h: &[DVector<f64>]) -> f64 {
        let roots: Vec<&DMatrix<f64>> = self.covariances.iter().map(PsdMatrix::principal_sqrt).collect();
        let mut best = f64::INFINITY;
        for w in &self.w_net {
            let mut e_sq = 0.0;
            for l in 0..self.k() {
                let a = roots[l] * w;
                let na = a.norm();
                let u = &h[l] * na - &self.y[l];
                let e = g[l].dot(&a) + u.norm();
                if e > 0.0 {
                    e_sq += e * e;
                }
            }
            let e_norm = e_sq.sqrt();
            let inner = if self.c_v > 0.0 && e_norm / (2.0 * self.c_v) <= self.r_v {
                e_sq / (4.0 * self.c_v)
            } else {
                self.r_v * e_norm - self.c_v * self.r_v * self.r_v
            };
            best = best.min(inner + self.c_w * w.norm_squared() + self.q.dot(w));
        }
        best
    }
}

/// `|φ(g,h) − φ(g',h')| / ‖(g,h) − (g',h')‖`, or `None` for pairs closer than `1e-8`.
pub fn lipschitz_ratio(
    inst: &CompactInstance,
    a: &(Vec<DVector<f64>>, Vec<DVector<f64>>),
    b: &(Vec<DVector<f64>>, Vec<DVector<f64>>),
) -> Option<f64> {
    let dist_sq: f64 = a.0.iter().zip(&b.0).chain(a.1.iter().zip(&b.1)).map(|(x, y)| (x - y).norm_squared()).sum();
    let dist = dist_sq.sqrt();
    if dist < 1e-8 {
        return None;
    }
    Some((inst.phi(&a.0, &a.1) - inst.phi(&b.0, &b.1)).abs() / dist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub skipped: usize,
    pub max_ratio: f64,
    pub bound: f64,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.max_ratio <= self.bound * (1.0 + 1e-9)
    }
}

/// Sample pairs `(g,h)`, `(g,h) + ε u` with random unit `u` and log-uniform
/// `ε ∈ [1e-3, 1]` (half the pairs) or two independent draws (the other half).
pub fn lipschitz_check(inst: &CompactInstance, trials: usize, seed: u64) -> LipschitzReport {
    let ratios: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, "checks.lipschitz", &[t as u64]);
            let a = inst.draw(&mut r);
            let b = if t % 2 == 0 {
                let (mut dg, mut dh) = inst.draw(&mut r);
                let norm = dg.iter().chain(&dh).map(|x| x.norm_squared()).sum::<f64>().sqrt();
                let eps = 10f64.powf(-3.0 * r.random::<f64>()) / norm;
                for (x, base) in dg.iter_mut().zip(&a.0) {
                    *x = base + &*x * eps;
                }
                for (x, base) in dh.iter_mut().zip(&a.1) {
                    *x = base + &*x * eps;
                }
                (dg, dh)
            } else {
                inst.draw(&mut r)
            };
            lipschitz_ratio(inst, &a, &b)
        })
        .collect();
    let skipped = ratios.iter().filter(|r| r.is_none()).count();
    LipschitzReport {
        pairs: trials - skipped,
        skipped,
        max_ratio: ratios.into_iter().flatten().fold(0.0, f64::max),
        bound: inst.lipschitz_bound(),
    }
}

/// Thresholds of the concentration check.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonGrid {
    Absolute(Vec<f64>),
    /// Multiples of the sample standard deviation of `φ`.
    SampleStd(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub epsilon: f64,
    pub frequency: f64,
    pub stderr: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationReport {
    /// Every exceedance frequency is below its bound plus `sigmas` binomial stderrs.
    pub fn passed(&self, sigmas: f64) -> bool {
        self.rows.iter().all(|r| r.frequency <= r.bound + sigmas * r.stderr)
    }
}

/// Empirical `P(|φ − Eφ| > ε)` against `exp(−ε²/(4σ²R_w²R_v²))`, with `Eφ`
/// estimated by the sample mean.
pub fn concentration_check(inst: &CompactInstance, trials: usize, grid: &EpsilonGrid, seed: u64) -> Result<ConcentrationReport> {
    if trials < 2 {
        return Err(Error::config("concentration check needs at least two trials"));
    }
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, "checks.concentration", &[t as u64]);
            let (g, h) = inst.draw(&mut r);
            inst.phi(&g, &h)
        })
        .collect();
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let eps: Vec<f64> = match grid {
        EpsilonGrid::Absolute(e) => e.clone(),
        EpsilonGrid::SampleStd(m) => m.iter().map(|m| m * std).collect(),
    };
    let l = inst.lipschitz_bound();
    let rows = eps
        .into_iter()
        .map(|epsilon| {
            let frequency = values.iter().filter(|v| (*v - mean).abs() > epsilon).count() as f64 / n;
            ConcentrationRow {
                epsilon,
                frequency,
                stderr: binomial_stderr(frequency, trials),
                // L² = 2σ²R_w²R_v², so ε²/(4σ²R_w²R_v²) = ε²/(2L²).
                bound: (-epsilon * epsilon / (2.0 * l * l)).exp(),
            }
        })
        .collect();
    Ok(ConcentrationReport { trials, mean, std, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::po::q_function;

    fn identity_instance(k: usize, d: usize, n: usize) -> MinMaxInstance {
        MinMaxInstance {
            k,
            d,
            n_list: vec![n; k],
            s_w: vec![DVector::from_element(d, 1.0)],
            s_v: vec![vec![DVector::from_element(n, 1.0)]; k],
            psi: Psi::Zero,
            covariances: (0..k).map(|_| PsdMatrix::isotropic(d, 1.0).unwrap()).collect(),
            alpha: None,
            beta: None,
        }
    }

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn gap_examples() {
        let inst = identity_instance(1, 2, 2);
        let g = covariance_gap(&inst, &e(2, 0), &e(2, 1), &[e(2, 0)], &[e(2, 1)]).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let w = DVector::from_vec(vec![0.3, -1.2]);
        let g = covariance_gap(&inst, &w, &w, &[e(2, 0)], &[e(2, 1)]).unwrap();
        assert!(g.abs() < 1e-15);
    }

    #[test]
    fn variance_examples() {
        let inst = identity_instance(1, 2, 2);
        assert_eq!(variance_match(&inst, &e(2, 0), &[DVector::zeros(2)]).unwrap(), (0.0, 0.0));
        let (x, y) = variance_match(&inst, &e(2, 0), &[e(2, 1)]).unwrap();
        assert!((x - 2.0).abs() < 1e-15 && (y - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let inst = identity_instance(2, 2, 3);
        assert!(covariance_gap(&inst, &e(2, 0), &e(2, 1), &[e(3, 0)], &[e(3, 1)]).is_err());
        assert!(covariance_gap(&inst, &e(3, 0), &e(2, 1), &[e(3, 0), e(3, 0)], &[e(3, 1), e(3, 1)]).is_err());
    }

    #[test]
    fn gap_sweep_passes_and_fault_is_caught() {
        let ok = gap_sweep(2000, 5, Fault::None).unwrap();
        assert_eq!(ok.tuples, 2000);
        assert!(ok.passed(1e-12), "{ok:?}");
        let bad = gap_sweep(2000, 5, Fault::GapSignFlip).unwrap();
        assert!(!bad.passed(1e-12));
    }

    #[test]
    fn covariances_match_monte_carlo() {
        let inst = MinMaxInstance::random(
            &RandomInstance {
                k: 2,
                d: 3,
                n: 2,
                w_points: 2,
                v_points: 2,
                with_psi: false,
            },
            9,
        )
        .unwrap();
        let (w, wp) = (&inst.s_w[0], &inst.s_w[1]);
        let v = [inst.s_v[0][0].clone(), inst.s_v[1][0].clone()];
        let vp = [inst.s_v[0][1].clone(), inst.s_v[1][1].clone()];
        let (want_x, want_y) = process_covariances(&inst, w, wp, &v, &vp).unwrap();
        let images_a: Vec<_> = (0..2).map(|l| (inst.alpha_of(l, w), inst.alpha_of(l, wp))).collect();
        let mut r = rng::stream(1, "test", &[]);
        let trials = 200_000;
        let (mut sx, mut sy) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
        for _ in 0..trials {
            let (mut x, mut xp, mut y, mut yp) = (0.0, 0.0, 0.0, 0.0);
            for l in 0..2 {
                let (a, ap) = &images_a[l];
                let g_mat = rng::normal_matrix(&mut r, 2, 3);
                let gamma = rng::normal(&mut r);
                let g = rng::normal_vector(&mut r, 3);
                let h = rng::normal_vector(&mut r, 2);
                x += v[l].dot(&(&g_mat * a)) + gamma * a.norm() * v[l].norm();
                xp += vp[l].dot(&(&g_mat * ap)) + gamma * ap.norm() * vp[l].norm();
                y += v[l].norm() * g.dot(a) + a.norm() * h.dot(&v[l]);
                yp += vp[l].norm() * g.dot(ap) + ap.norm() * h.dot(&vp[l]);
            }
            sx.push(x * xp);
            sy.push(y * yp);
        }
        let (mx, sex) = crate::po::mean_stderr(&sx);
        let (my, sey) = crate::po::mean_stderr(&sy);
        assert!((mx - want_x).abs() < 4.0 * sex, "{mx} ± {sex} vs {want_x}");
        assert!((my - want_y).abs() < 4.0 * sey, "{my} ± {sey} vs {want_y}");
    }

    #[test]
    fn singleton_sets_match_gaussian_cdf() {
        // Both sides reduce to N(ψ, 2‖w‖²‖v‖²) when there is nothing to optimize.
        let mut inst = identity_instance(1, 2, 2);
        inst.s_w = vec![DVector::from_vec(vec![0.6, 0.8])];
        inst.s_v = vec![vec![DVector::from_vec(vec![1.0, 1.0])]];
        let sd = (2.0f64 * 1.0 * 2.0).sqrt();
        let grid: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.75).collect();
        let trials = 40_000;
        let rep = mc_gcgmt_inequality(&inst, &grid, trials, 3).unwrap();
        for row in &rep.rows {
            let want = 1.0 - q_function(row.t / sd);
            assert!((row.p_phi_hat - want).abs() <= 3.0 * binomial_stderr(want, trials) + 1e-12);
            assert!((row.p_ao_scaled / 2.0 - want).abs() <= 3.0 * binomial_stderr(want, trials) + 1e-12);
        }
        assert!(rep.passed(3.0));
    }

    #[test]
    fn inequality_holds_on_small_instances() {
        for (seed, with_psi) in [(1u64, true), (2, false)] {
            let inst = MinMaxInstance::random(
                &RandomInstance {
                    k: 2,
                    d: 2,
                    n: 2,
                    w_points: 5,
                    v_points: 4,
                    with_psi,
                },
                seed,
            )
            .unwrap();
            let grid = pilot_t_grid(&inst, 21, 2000, seed).unwrap();
            let rep = mc_gcgmt_inequality(&inst, &grid, 20_000, seed).unwrap();
            assert!(rep.passed(3.0), "max violation {}", rep.max_violation_sigma());
        }
    }

    #[test]
    fn custom_psi_enumerates_the_product() {
        let base = MinMaxInstance::random(
            &RandomInstance {
                k: 2,
                d: 2,
                n: 2,
                w_points: 4,
                v_points: 3,
                with_psi: true,
            },
            4,
        )
        .unwrap();
        let mut custom = base.clone();
        let psi = base.psi.clone();
        custom.psi = Psi::Custom(Arc::new(move |w, v| psi.eval(w, v)));
        let a = sample_min_max(&base, 50, 8).unwrap();
        let b = sample_min_max(&custom, 50, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let mut inst = identity_instance(2, 1, 1);
        inst.s_w = vec![DVector::from_element(1, 1.0); 1001];
        inst.s_v = vec![vec![DVector::from_element(1, 1.0); 1001]; 2];
        assert!(matches!(sample_min_max(&inst, 1, 0), Err(Error::Config(_))));
    }

    fn compact(scale: f64, seed: u64) -> CompactInstance {
        let c = PsdMatrix::isotropic(2, scale).unwrap();
        CompactInstance::new(vec![c], vec![2], 1.0, 1.0, 1000, seed).unwrap()
    }

    #[test]
    fn lipschitz_ratio_is_bounded_and_nearly_tight() {
        let inst = compact(1.0, 1);
        let rep = lipschitz_check(&inst, 1000, 2);
        assert!((rep.bound - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.max_ratio >= rep.bound / 3.0, "{rep:?}");
        let scaled = compact(2.0, 1);
        let rep2 = lipschitz_check(&scaled, 1000, 2);
        assert!((rep2.bound - 2.0 * rep.bound).abs() < 1e-12);
        assert!(rep2.passed(), "{rep2:?}");
    }

    #[test]
    fn identical_points_are_skipped() {
        let inst = compact(1.0, 1);
        let mut r = rng::stream(0, "t", &[]);
        let a = inst.draw(&mut r);
        assert!(lipschitz_ratio(&inst, &a, &a.clone()).is_none());
    }

    #[test]
    fn concentration_bound_holds() {
        let inst = compact(1.0, 3);
        let rep = concentration_check(&inst, 4000, &EpsilonGrid::SampleStd(vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0]), 4).unwrap();
        assert!(rep.passed(3.0), "{rep:?}");
        let wide = concentration_check(&inst, 200, &EpsilonGrid::Absolute(vec![0.0, 1e6]), 4).unwrap();
        assert!(wide.rows[1].frequency == 0.0 && wide.rows[0].bound == 1.0 && wide.passed(3.0));
    }
}
