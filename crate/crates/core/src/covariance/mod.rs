//! Positive-semidefinite covariance matrices and the specs that build them.
//!
//! A [`PsdMatrix`] is validated and eigendecomposed once at construction.
//! Negative eigenvalues down to `-clamp_tol * max_eig` are treated as
//! floating-point jitter and clamped to zero; anything more negative is
//! rejected. The principal square root is filled lazily from the cached
//! spectrum.

mod frame;

pub use frame::{FrameResolvent, JointFrame};

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Relative tolerance for clamping small negative eigenvalues.
pub const DEFAULT_CLAMP_TOL: f64 = 1e-10;

/// Relative asymmetry accepted (and symmetrized away) by [`PsdMatrix::from_dense`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// How a covariance matrix is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// `sigma_base^2 * I`
    Isotropic { sigma_base: f64 },
    /// `sigma_base^2 * I + nu nu^T`, with `nu` either given or drawn from `N(0, spike_sigma^2 I)`.
    Spiked {
        sigma_base: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spike_sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spike: Option<Vec<f64>>,
    },
    /// Explicit row-major entries.
    Dense { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    #[serde(flatten)]
    pub kind: CovarianceKind,
    pub dim: usize,
}

impl CovarianceSpec {
    pub fn isotropic(dim: usize, sigma_base: f64) -> Self {
        Self {
            kind: CovarianceKind::Isotropic { sigma_base },
            dim,
        }
    }

    pub fn spiked_random(dim: usize, sigma_base: f64, spike_sigma: f64) -> Self {
        Self {
            kind: CovarianceKind::Spiked {
                sigma_base,
                spike_sigma: Some(spike_sigma),
                spike: None,
            },
            dim,
        }
    }

    pub fn spiked_explicit(sigma_base: f64, spike: Vec<f64>) -> Self {
        Self {
            dim: spike.len(),
            kind: CovarianceKind::Spiked {
                sigma_base,
                spike_sigma: None,
                spike: Some(spike),
            },
        }
    }

    pub fn dense(matrix: Vec<Vec<f64>>) -> Self {
        Self {
            dim: matrix.len(),
            kind: CovarianceKind::Dense { matrix },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("covariance dimension must be positive"));
        }
        match &self.kind {
            CovarianceKind::Isotropic { sigma_base } => check_sigma(*sigma_base),
            CovarianceKind::Spiked {
                sigma_base,
                spike_sigma,
                spike,
            } => {
                check_sigma(*sigma_base)?;
                match (spike_sigma, spike) {
                    (_, Some(v)) if v.len() != self.dim => Err(Error::shape(format!(
                        "spike vector has length {} but dim is {}",
                        v.len(),
                        self.dim
                    ))),
                    (Some(s), None) => check_sigma(*s),
                    (None, None) => Err(Error::config(
                        "spiked covariance needs either spike_sigma or an explicit spike",
                    )),
                    _ => Ok(()),
                }
            }
            CovarianceKind::Dense { matrix } => {
                if matrix.len() != self.dim || matrix.iter().any(|row| row.len() != matrix.len())
                {
                    let cols = matrix.first().map_or(0, Vec::len);
                    return Err(Error::NotSquare {
                        rows: matrix.len(),
                        cols,
                    });
                }
                Ok(())
            }
        }
    }
}

fn check_sigma(s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::domain(format!("sigma must be finite and >= 0, got {s}")));
    }
    Ok(())
}

/// `floor * I + basis * coeffs * basis^T`, with orthonormal `basis` columns and PSD `coeffs`.
#[derive(Debug, Clone)]
pub struct LowRankStructure {
    pub floor: f64,
    pub basis: DMatrix<f64>,
    pub coeffs: DMatrix<f64>,
}

#[derive(Debug)]
pub struct PsdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    structure: LowRankStructure,
    spike: Option<DVector<f64>>,
    sqrt_cache: OnceLock<DMatrix<f64>>,
}

impl Clone for PsdMatrix {
    fn clone(&self) -> Self {
        let sqrt_cache = OnceLock::new();
        if let Some(root) = self.sqrt_cache.get() {
            let _ = sqrt_cache.set(root.clone());
        }
        Self {
            entries: self.entries.clone(),
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: self.eigenvectors.clone(),
            structure: self.structure.clone(),
            spike: self.spike.clone(),
            sqrt_cache,
        }
    }
}

impl PsdMatrix {
    /// Validate, symmetrize and eigendecompose a dense matrix.
    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        Self::from_dense_with_tol(m, DEFAULT_CLAMP_TOL)
    }

    pub fn from_dense_with_tol(m: DMatrix<f64>, clamp_tol: f64) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols || rows == 0 {
            return Err(Error::NotSquare { rows, cols });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..rows {
            for j in (i + 1)..rows {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || !b.is_finite() || (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric {
                        i,
                        j,
                        upper: a,
                        lower: b,
                    });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Self::from_symmetric(sym, clamp_tol)
    }

    /// `sigma_base^2 I + spike spike^T`.
    pub fn spiked(sigma_base: f64, spike: DVector<f64>) -> Result<Self> {
        check_sigma(sigma_base)?;
        let d = spike.len();
        if d == 0 {
            return Err(Error::NotSquare { rows: 0, cols: 0 });
        }
        if spike.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("spike entries must be finite"));
        }
        let floor = sigma_base * sigma_base;
        let entries = DMatrix::identity(d, d) * floor + &spike * spike.transpose();
        let norm2 = spike.norm_squared();
        // Closed-form eigensystem: a Householder reflection sends e_{d-1} to
        // ±ν/‖ν‖, and its other columns span the complement (eigenvalue σ²).
        let vectors = if norm2 > 0.0 {
            let mut v = &spike / norm2.sqrt();
            v[d - 1] += if v[d - 1] >= 0.0 { 1.0 } else { -1.0 };
            let scale = 2.0 / v.norm_squared();
            DMatrix::identity(d, d) - &v * v.transpose() * scale
        } else {
            DMatrix::identity(d, d)
        };
        let mut eigenvalues = DVector::from_element(d, floor);
        eigenvalues[d - 1] += norm2;
        let structure = if norm2 > 0.0 {
            LowRankStructure {
                floor,
                basis: DMatrix::from_column_slice(d, 1, (&spike / norm2.sqrt()).as_slice()),
                coeffs: DMatrix::from_element(1, 1, norm2),
            }
        } else {
            LowRankStructure {
                floor,
                basis: DMatrix::zeros(d, 0),
                coeffs: DMatrix::zeros(0, 0),
            }
        };
        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors: vectors,
            structure,
            spike: Some(spike),
            sqrt_cache: OnceLock::new(),
        })
    }

    pub fn isotropic(dim: usize, sigma_base: f64) -> Result<Self> {
        check_sigma(sigma_base)?;
        Self::from_symmetric(
            DMatrix::identity(dim, dim) * (sigma_base * sigma_base),
            DEFAULT_CLAMP_TOL,
        )
    }

    fn from_symmetric(
        entries: DMatrix<f64>,
        clamp_tol: f64,
    ) -> Result<Self> {
        let d = entries.nrows();
        let eig = SymmetricEigen::try_new(entries.clone(), f64::EPSILON, 0).ok_or_else(|| {
            let max_abs = entries.amax();
            let diag_min = entries.diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
            Error::EigenFailure {
                dim: d,
                max_abs,
                diag_ratio: max_abs / diag_min.max(f64::MIN_POSITIVE),
            }
        })?;
        // Sort ascending so downstream code can rely on ordering.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let raw = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);

        let max_eig = raw[d - 1].max(0.0);
        let min_eig = raw[0];
        if min_eig < -clamp_tol * max_eig.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        let eigenvalues = raw.map(|v| v.max(0.0));

        let structure = spectral_structure(&eigenvalues, &vectors);

        Ok(Self {
            entries,
            eigenvalues,
            eigenvectors: vectors,
            structure,
            spike: None,
            sqrt_cache: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Clamped eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Operator norm of the principal square root.
    pub fn sqrt_op_norm(&self) -> f64 {
        self.max_eigenvalue().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// The realized spike vector for spiked matrices.
    pub fn spike(&self) -> Option<&DVector<f64>> {
        self.spike.as_ref()
    }

    pub fn structure(&self) -> &LowRankStructure {
        &self.structure
    }

    /// Principal square root, computed once from the cached eigendecomposition.
    pub fn principal_sqrt(&self) -> &DMatrix<f64> {
        self.sqrt_cache.get_or_init(|| {
            let roots = self.eigenvalues.map(f64::sqrt);
            let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
                self.eigenvectors[(r, c)] * roots[c]
            });
            let root = &scaled * self.eigenvectors.transpose();
            (&root + root.transpose()) * 0.5
        })
    }

    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.entries * x))
    }

    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.entries * y))
    }

    /// Solve `(shift I + self) x = rhs` with a Cholesky factorization.
    pub fn solve_shifted(&self, shift: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if !(shift >= 0.0) {
            return Err(Error::domain(format!("shift must be >= 0, got {shift}")));
        }
        if rhs.len() != self.dim() {
            return Err(Error::shape(format!(
                "rhs has length {} but matrix is {}x{}",
                rhs.len(),
                self.dim(),
                self.dim()
            )));
        }
        let min_shifted = self.min_eigenvalue() + shift;
        let scale = (self.max_eigenvalue() + shift).max(f64::MIN_POSITIVE);
        if min_shifted <= 1e-13 * scale {
            return Err(Error::Singular { shift, min_shifted });
        }
        let mut shifted = self.entries.clone();
        for i in 0..self.dim() {
            shifted[(i, i)] += shift;
        }
        let chol = shifted
            .cholesky()
            .ok_or(Error::Singular { shift, min_shifted })?;
        Ok(chol.solve(rhs))
    }

    /// `self * v`
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }
}

fn spectral_structure(eigenvalues: &DVector<f64>, vectors: &DMatrix<f64>) -> LowRankStructure {
    let d = eigenvalues.len();
    let floor = eigenvalues[0];
    let tol = 1e-12 * eigenvalues[d - 1].abs().max(1.0);
    let keep: Vec<usize> = (0..d).filter(|&i| eigenvalues[i] - floor > tol).collect();
    let basis = DMatrix::from_fn(d, keep.len(), |r, c| vectors[(r, keep[c])]);
    let coeffs = DMatrix::from_fn(keep.len(), keep.len(), |r, c| {
        if r == c {
            eigenvalues[keep[r]] - floor
        } else {
            0.0
        }
    });
    LowRankStructure {
        floor,
        basis,
        coeffs,
    }
}

/// Build the matrix described by `spec`. Sampled spikes need `seed`.
pub fn build(spec: &CovarianceSpec, seed: Option<u64>) -> Result<PsdMatrix> {
    spec.validate()?;
    let d = spec.dim;
    match &spec.kind {
        CovarianceKind::Isotropic { sigma_base } => PsdMatrix::isotropic(d, *sigma_base),
        CovarianceKind::Spiked {
            sigma_base,
            spike_sigma,
            spike,
        } => {
            let nu = match (spike, spike_sigma) {
                (Some(v), _) => DVector::from_column_slice(v),
                (None, Some(s)) => {
                    let seed = seed.ok_or_else(|| {
                        Error::config("a seed is required to sample the spike of a spiked covariance")
                    })?;
                    let mut r = rng::stream(seed, "spike", &[]);
                    rng::normal_vector(&mut r, d) * *s
                }
                (None, None) => unreachable!("validated above"),
            };
            PsdMatrix::spiked(*sigma_base, nu)
        }
        CovarianceKind::Dense { matrix } => {
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            PsdMatrix::from_dense(DMatrix::from_row_slice(d, d, &flat))
        }
    }
}

pub fn principal_sqrt(m: &PsdMatrix) -> &DMatrix<f64> {
    m.principal_sqrt()
}

pub fn solve_shifted(m: &PsdMatrix, shift: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.solve_shifted(shift, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_psd(d: usize, seed: u64) -> PsdMatrix {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = rng::normal_matrix(&mut r, d, d);
        PsdMatrix::from_dense(&g * g.transpose() / d as f64).unwrap()
    }

    #[test]
    fn isotropic_unit_is_identity() {
        let m = build(&CovarianceSpec::isotropic(3, 1.0), None).unwrap();
        assert_eq!(m.entries(), &DMatrix::<f64>::identity(3, 3));
        assert!((m.principal_sqrt() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn rank_one_outer_product() {
        let m = build(&CovarianceSpec::spiked_explicit(0.0, vec![1.0, 0.0]), None).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.entries(), &expected);
    }

    #[test]
    fn spiked_sqrt_matches_rank_one_update() {
        // sigma^2 I + e1 e1^T with sigma = 1 has root diag(sqrt 2, 1, ..., 1).
        let d = 5;
        let mut e1 = DVector::zeros(d);
        e1[0] = 1.0;
        let m = PsdMatrix::spiked(1.0, e1).unwrap();
        let mut expected = DMatrix::<f64>::identity(d, d);
        expected[(0, 0)] = 2f64.sqrt();
        assert!((m.principal_sqrt() - expected).amax() < 1e-12);
    }

    #[test]
    fn random_sqrt_multiplies_back() {
        let m = random_psd(10, 11);
        let r = m.principal_sqrt();
        assert!((r * r - m.entries()).amax() <= 1e-8);
        assert!((r - r.transpose()).amax() == 0.0);
    }

    #[test]
    fn sqrt_cache_is_bit_identical() {
        let m = random_psd(8, 3);
        let a = m.principal_sqrt().clone();
        let b = m.principal_sqrt();
        assert_eq!(&a, b);
        assert!(std::ptr::eq(m.principal_sqrt(), m.principal_sqrt()));
    }

    #[test]
    fn spiked_spectrum() {
        let spec = CovarianceSpec::spiked_random(30, 0.5, 1.0);
        let m = build(&spec, Some(3)).unwrap();
        let nu = m.spike().unwrap();
        let ev = m.eigenvalues();
        for i in 0..29 {
            assert!((ev[i] - 0.25).abs() < 1e-8, "bulk eigenvalue {i} = {}", ev[i]);
        }
        assert!((ev[29] - (0.25 + nu.norm_squared())).abs() < 1e-8);
    }

    #[test]
    fn spiked_eigensystem_reconstructs_the_matrix() {
        for (seed, d) in [(1u64, 1usize), (2, 2), (3, 17)] {
            let m = build(&CovarianceSpec::spiked_random(d, 0.7, 1.3), Some(seed)).unwrap();
            let v = m.eigenvectors();
            let rebuilt = v * DMatrix::from_diagonal(m.eigenvalues()) * v.transpose();
            assert!((&rebuilt - m.entries()).amax() < 1e-12);
            assert!((v.transpose() * v - DMatrix::<f64>::identity(d, d)).amax() < 1e-12);
            let dense = PsdMatrix::from_dense(m.entries().clone()).unwrap();
            assert!((m.principal_sqrt() - dense.principal_sqrt()).amax() < 1e-10);
        }
        let flat = PsdMatrix::spiked(0.5, DVector::zeros(4)).unwrap();
        assert_eq!(flat.eigenvectors(), &DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn spiked_trace_expectation_over_seeds() {
        // E tr = d sigma_base^2 + d spike_sigma^2 = 50 * 0.25 + 50.
        let spec = CovarianceSpec::spiked_random(50, 0.5, 1.0);
        let traces: Vec<f64> = (0..100)
            .map(|s| build(&spec, Some(s)).unwrap().trace())
            .collect();
        let mean = traces.iter().sum::<f64>() / 100.0;
        let var = traces.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 99.0;
        let se = (var / 100.0).sqrt();
        assert!((mean - 62.5).abs() <= 2.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn missing_seed_is_config_error() {
        let spec = CovarianceSpec::spiked_random(4, 0.5, 1.0);
        assert!(matches!(build(&spec, None), Err(Error::Config(_))));
    }

    #[test]
    fn non_symmetric_names_entry_pair() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.2, 1.0]);
        match PsdMatrix::from_dense(m) {
            Err(Error::NotSymmetric { i, j, .. }) => assert_eq!((i, j), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let spec = CovarianceSpec {
            kind: CovarianceKind::Dense {
                matrix: vec![vec![1.0, 0.0], vec![0.0]],
            },
            dim: 2,
        };
        assert!(matches!(build(&spec, None), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn clamps_tiny_negative_and_rejects_large_negative() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let p = PsdMatrix::from_dense(m).unwrap();
        assert_eq!(p.min_eigenvalue(), 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(PsdMatrix::from_dense(bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn shifted_solves() {
        let id = PsdMatrix::isotropic(2, 1.0).unwrap();
        let x = id.solve_shifted(1.0, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-15);

        let zero = PsdMatrix::isotropic(2, 0.0).unwrap();
        let x = zero.solve_shifted(0.5, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((x - DVector::from_vec(vec![2.0, 2.0])).amax() < 1e-15);

        assert!(matches!(
            zero.solve_shifted(0.0, &DVector::from_vec(vec![1.0, 1.0])),
            Err(Error::Singular { .. })
        ));
        assert!(matches!(
            id.solve_shifted(-1.0, &DVector::from_vec(vec![1.0, 1.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn shifted_solve_residual_on_random_matrix() {
        let m = random_psd(20, 5);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let rhs = rng::normal_vector(&mut r, 20);
        let x = m.solve_shifted(0.1, &rhs).unwrap();
        let resid = m.apply(&x) + &x * 0.1 - &rhs;
        assert!(resid.norm() <= 1e-10 * rhs.norm());
    }

    #[test]
    fn spec_serializes_in_config_format() {
        let spec = CovarianceSpec::spiked_random(10, 0.5, 1.0);
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("kind = \"spiked\""));
        let back: CovarianceSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
