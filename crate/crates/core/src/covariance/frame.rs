//! A shared orthonormal frame for a family of covariance matrices.
//!
//! Every matrix in the family is written as `s_l I + Q K_l Q^T`, where the
//! columns of `Q` span the non-isotropic parts of all members plus any extra
//! vectors (such as a ground-truth parameter). Resolvents of non-negative
//! combinations `shift I + sum_l c_l Sigma_l` then act as a scalar on the
//! orthogonal complement of `Q` and as a small `m x m` inverse inside it, so
//! traces and quadratic forms cost `O(m^3)` instead of `O(d^3)`. For a
//! general dense family `m` grows to `d` and the computation is the plain
//! dense one.

use nalgebra::{DMatrix, DVector};

use super::PsdMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JointFrame {
    dim: usize,
    basis: DMatrix<f64>,
    floors: Vec<f64>,
    reduced: Vec<DMatrix<f64>>,
    extras: Vec<DVector<f64>>,
}

impl JointFrame {
    pub fn new(mats: &[&PsdMatrix], extras: &[&DVector<f64>]) -> Result<Self> {
        let dim = mats
            .first()
            .map(|m| m.dim())
            .or_else(|| extras.first().map(|v| v.len()))
            .ok_or_else(|| Error::shape("joint frame needs at least one member"))?;
        if mats.iter().any(|m| m.dim() != dim) || extras.iter().any(|v| v.len() != dim) {
            return Err(Error::shape("joint frame members have different dimensions"));
        }

        let mut columns: Vec<DVector<f64>> = Vec::new();
        for m in mats {
            let s = m.structure();
            for c in 0..s.basis.ncols() {
                columns.push(s.basis.column(c).into_owned());
            }
        }
        for v in extras {
            columns.push((*v).clone());
        }
        let q = orthonormalize(dim, &columns);
        let m = q.ncols();

        let mut floors = Vec::with_capacity(mats.len());
        let mut reduced = Vec::with_capacity(mats.len());
        for mat in mats {
            let s = mat.structure();
            floors.push(s.floor);
            if m == 0 || s.basis.ncols() == 0 {
                reduced.push(DMatrix::zeros(m, m));
                continue;
            }
            let proj = q.transpose() * &s.basis;
            let k = &proj * &s.coeffs * proj.transpose();
            reduced.push((&k + k.transpose()) * 0.5);
        }
        let extras = extras.iter().map(|v| q.transpose() * *v).collect();

        Ok(Self {
            dim,
            basis: q,
            floors,
            reduced,
            extras,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frame directions `m`.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn members(&self) -> usize {
        self.floors.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Coordinates of extra vector `i` in the frame.
    pub fn extra(&self, i: usize) -> &DVector<f64> {
        &self.extras[i]
    }

    /// Resolvent of `shift I + sum_l weights[l] Sigma_l`.
    pub fn resolvent(&self, weights: &[f64], shift: f64) -> Result<FrameResolvent<'_>> {
        if weights.len() != self.members() {
            return Err(Error::shape(format!(
                "expected {} weights, got {}",
                self.members(),
                weights.len()
            )));
        }
        let m = self.rank();
        let iso: f64 = shift + weights.iter().zip(&self.floors).map(|(w, s)| w * s).sum::<f64>();
        let complement = self.dim - m;
        if complement > 0 && !(iso > 0.0) {
            return Err(Error::Singular {
                shift,
                min_shifted: iso,
            });
        }
        let mut shifted = DMatrix::identity(m, m) * iso;
        for (w, k) in weights.iter().zip(&self.reduced) {
            if *w != 0.0 {
                shifted += k * *w;
            }
        }
        let inv = if m == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let chol = shifted.clone().cholesky().ok_or(Error::Singular {
                shift,
                min_shifted: iso,
            })?;
            chol.inverse()
        };
        Ok(FrameResolvent {
            frame: self,
            iso_inv: if complement > 0 { 1.0 / iso } else { 0.0 },
            inv,
        })
    }
}

/// `(shift I + sum_l c_l Sigma_l)^{-1}` expressed in a [`JointFrame`].
#[derive(Debug, Clone)]
pub struct FrameResolvent<'a> {
    frame: &'a JointFrame,
    iso_inv: f64,
    inv: DMatrix<f64>,
}

impl FrameResolvent<'_> {
    fn complement(&self) -> f64 {
        (self.frame.dim - self.frame.rank()) as f64
    }

    /// `s_l I + K_l` restricted to the frame.
    fn member_in_frame(&self, l: usize) -> DMatrix<f64> {
        let m = self.frame.rank();
        &self.frame.reduced[l] + DMatrix::identity(m, m) * self.frame.floors[l]
    }

    /// `tr R`
    pub fn trace(&self) -> f64 {
        self.complement() * self.iso_inv + self.inv.trace()
    }

    /// `tr(Sigma_l R)`
    pub fn trace_member(&self, l: usize) -> f64 {
        let s = self.frame.floors[l];
        s * self.complement() * self.iso_inv + (self.member_in_frame(l) * &self.inv).trace()
    }

    /// `tr(Sigma_l R Sigma_j R)`
    pub fn trace_member_pair(&self, l: usize, j: usize) -> f64 {
        let (sl, sj) = (self.frame.floors[l], self.frame.floors[j]);
        let left = self.member_in_frame(l) * &self.inv;
        let right = self.member_in_frame(j) * &self.inv;
        sl * sj * self.iso_inv * self.iso_inv * self.complement() + (left * right).trace()
    }

    /// `u_i^T R u_j` for extra vectors `i`, `j` (which lie inside the frame).
    pub fn extra_quad(&self, i: usize, j: usize) -> f64 {
        self.frame.extras[i].dot(&(&self.inv * &self.frame.extras[j]))
    }

    /// `u_i^T R Sigma_l R u_i`
    pub fn extra_member_quad(&self, i: usize, l: usize) -> f64 {
        let y = &self.inv * &self.frame.extras[i];
        y.dot(&(self.member_in_frame(l) * &y))
    }

    /// `R v` for an arbitrary vector, returned in ambient coordinates.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let q = &self.frame.basis;
        let coords = q.transpose() * v;
        let inside = q * (&self.inv * &coords);
        let outside = (v - q * coords) * self.iso_inv;
        inside + outside
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass; drops columns
/// that are numerically inside the span already built.
fn orthonormalize(dim: usize, columns: &[DVector<f64>]) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for col in columns {
        let norm0 = col.norm();
        if norm0 == 0.0 || kept.len() == dim {
            continue;
        }
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &kept {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-10 * norm0 {
            kept.push(v / n);
        }
    }
    if kept.is_empty() {
        return DMatrix::zeros(dim, 0);
    }
    DMatrix::from_columns(&kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::SeedableRng;

    fn dense_resolvent(mats: &[&PsdMatrix], w: &[f64], shift: f64) -> DMatrix<f64> {
        let d = mats[0].dim();
        let mut t = DMatrix::identity(d, d) * shift;
        for (m, c) in mats.iter().zip(w) {
            t += m.entries() * *c;
        }
        t.try_inverse().unwrap()
    }

    #[test]
    fn matches_dense_inverse_for_spiked_family() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = 12;
        let s1 = PsdMatrix::spiked(0.5, rng::normal_vector(&mut r, d)).unwrap();
        let s2 = PsdMatrix::spiked(0.7, rng::normal_vector(&mut r, d)).unwrap();
        let s3 = PsdMatrix::isotropic(d, 0.3).unwrap();
        let theta = DVector::from_element(d, 1.0);
        let frame = JointFrame::new(&[&s1, &s2, &s3], &[&theta]).unwrap();
        assert_eq!(frame.rank(), 3);
        let w = [0.4, 1.3, 2.0];
        let res = frame.resolvent(&w, 0.2).unwrap();
        let rd = dense_resolvent(&[&s1, &s2, &s3], &w, 0.2);

        assert!((res.trace() - rd.trace()).abs() < 1e-10);
        for (l, s) in [&s1, &s2, &s3].iter().enumerate() {
            let direct = (s.entries() * &rd).trace();
            assert!((res.trace_member(l) - direct).abs() < 1e-10);
            let pair = (s.entries() * &rd * s2.entries() * &rd).trace();
            assert!((res.trace_member_pair(l, 1) - pair).abs() < 1e-9 * pair.abs().max(1.0));
            let q = theta.dot(&(&rd * s.entries() * &rd * &theta));
            assert!((res.extra_member_quad(0, l) - q).abs() < 1e-9 * q.abs().max(1.0));
        }
        assert!((res.extra_quad(0, 0) - theta.dot(&(&rd * &theta))).abs() < 1e-10);
        let v = rng::normal_vector(&mut r, d);
        assert!((res.apply(&v) - &rd * &v).amax() < 1e-10);
    }

    #[test]
    fn dense_family_uses_full_frame() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = 6;
        let g = rng::normal_matrix(&mut r, d, d);
        let a = PsdMatrix::from_dense(&g * g.transpose()).unwrap();
        let frame = JointFrame::new(&[&a], &[]).unwrap();
        let res = frame.resolvent(&[0.5], 0.1).unwrap();
        let rd = dense_resolvent(&[&a], &[0.5], 0.1);
        assert!((res.trace_member(0) - (a.entries() * &rd).trace()).abs() < 1e-9);
    }

    #[test]
    fn singular_complement_is_reported() {
        let d = 4;
        let mut e = DVector::zeros(d);
        e[0] = 1.0;
        let s = PsdMatrix::spiked(0.0, e).unwrap();
        let frame = JointFrame::new(&[&s], &[]).unwrap();
        assert!(matches!(frame.resolvent(&[1.0], 0.0), Err(Error::Singular { .. })));
    }
}
