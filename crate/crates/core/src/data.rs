//! Seeded generators for the two data models.
//!
//! Regression: `y_l = X_l θ* / √d + ν_l` with `X_l = G_l Σ_l^{1/2}` and
//! `ν_l ~ N(0, σ_l² I)`, for `l = 1..k`.
//!
//! Classification: a two-component Gaussian mixture with the `+1` class in
//! the first `n/2` rows and the `-1` class in the rest.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{self, CovarianceSpec, PsdMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    pub theta_star: DVector<f64>,
    pub noise_sigmas: Vec<f64>,
}

impl RegressionDataset {
    /// Recompute `X_l θ* / √d + ν_l` from the stored parts.
    pub fn reconstruct_targets(&self) -> Vec<DVector<f64>> {
        self.x
            .iter()
            .zip(&self.noise)
            .map(|(x, nu)| targets(x, &self.theta_star, nu))
            .collect()
    }

    /// Write `x_{l}.csv`, `y_{l}.csv`, `noise_{l}.csv` and `theta_star.csv` into `dir`.
    pub fn save_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for l in 0..self.k {
            write_matrix_csv(&dir.join(format!("x_{l}.csv")), &self.x[l])?;
            write_vector_csv(&dir.join(format!("y_{l}.csv")), &self.y[l])?;
            write_vector_csv(&dir.join(format!("noise_{l}.csv")), &self.noise[l])?;
        }
        write_vector_csv(&dir.join("theta_star.csv"), &self.theta_star)
    }
}

fn targets(x: &DMatrix<f64>, theta_star: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
    let scale = 1.0 / (theta_star.len() as f64).sqrt();
    x * theta_star * scale + noise
}

/// Draw a multi-source regression dataset for fixed covariances.
///
/// Source `l` draws its features from the substream `(seed, "regression.features", l)`
/// and its noise from `(seed, "regression.noise", l)`.
pub fn gen_regression(
    n: usize,
    covariances: &[PsdMatrix],
    noise_sigmas: &[f64],
    theta_star: &DVector<f64>,
    seed: u64,
) -> Result<RegressionDataset> {
    let k = covariances.len();
    let d = theta_star.len();
    if k == 0 {
        return Err(Error::config("at least one source is required"));
    }
    if noise_sigmas.len() != k {
        return Err(Error::config(format!("{} noise levels for {k} sources", noise_sigmas.len())));
    }
    if let Some(c) = covariances.iter().find(|c| c.dim() != d) {
        return Err(Error::config(format!("covariance dimension {} does not match theta_star length {d}", c.dim())));
    }
    if n == 0 || d == 0 {
        return Err(Error::config("n and d must be positive"));
    }
    if let Some(s) = noise_sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::config(format!("noise level must be non-negative, got {s}")));
    }

    let mut x = Vec::with_capacity(k);
    let mut y = Vec::with_capacity(k);
    let mut noise = Vec::with_capacity(k);
    for (l, (cov, &sigma)) in covariances.iter().zip(noise_sigmas).enumerate() {
        let mut feat = rng::stream(seed, "regression.features", &[l as u64]);
        let g = rng::normal_matrix(&mut feat, n, d);
        let xl = g * cov.principal_sqrt();
        let mut nz = rng::stream(seed, "regression.noise", &[l as u64]);
        let nu = rng::normal_vector(&mut nz, n) * sigma;
        y.push(targets(&xl, theta_star, &nu));
        x.push(xl);
        noise.push(nu);
    }
    Ok(RegressionDataset {
        k,
        n,
        d,
        x,
        y,
        noise,
        theta_star: theta_star.clone(),
        noise_sigmas: noise_sigmas.to_vec(),
    })
}

/// Same as [`gen_regression`] but builds the covariances from specs first.
/// Sampled spikes use the substream `(seed, "covariance", l)`.
pub fn gen_regression_from_specs(
    n: usize,
    specs: &[CovarianceSpec],
    noise_sigmas: &[f64],
    theta_star: &DVector<f64>,
    seed: u64,
) -> Result<RegressionDataset> {
    let covs = specs
        .iter()
        .enumerate()
        .map(|(l, s)| covariance::build(s, Some(rng::derive_u64(seed, "covariance", &[l as u64]))))
        .collect::<Result<Vec<_>>>()?;
    gen_regression(n, &covs, noise_sigmas, theta_star, seed)
}

/// Means with standard normal entries and entry-wise correlation `r`:
/// `μ2 = r μ1 + √(1 - r²) ε`.
pub fn gen_correlated_means(d: usize, r: f64, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(r.abs() <= 1.0) {
        return Err(Error::domain(format!("mean correlation must lie in [-1, 1], got {r}")));
    }
    let mut s = rng::stream(seed, "means", &[]);
    let mu1 = rng::normal_vector(&mut s, d);
    let eps = rng::normal_vector(&mut s, d);
    let mu2 = if r == 1.0 {
        mu1.clone()
    } else if r == -1.0 {
        -&mu1
    } else {
        &mu1 * r + eps * (1.0 - r * r).sqrt()
    };
    Ok((mu1, mu2))
}

#[derive(Debug, Clone)]
pub struct GmmDataset {
    pub n: usize,
    pub d: usize,
    pub data: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub sigma1: Arc<PsdMatrix>,
    pub sigma2: Arc<PsdMatrix>,
}

impl GmmDataset {
    pub fn save_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("data.csv"), &self.data)?;
        write_vector_csv(&dir.join("labels.csv"), &self.labels)?;
        write_vector_csv(&dir.join("mu1.csv"), &self.mu1)?;
        write_vector_csv(&dir.join("mu2.csv"), &self.mu2)
    }
}

/// Draw `n/2` rows from `N(μ1, Σ1)` followed by `n/2` rows from `N(μ2, Σ2)`.
pub fn gen_gmm(
    n: usize,
    mu1: &DVector<f64>,
    mu2: &DVector<f64>,
    sigma1: Arc<PsdMatrix>,
    sigma2: Arc<PsdMatrix>,
    seed: u64,
) -> Result<GmmDataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::config(format!("number of samples must be even and positive, got {n}")));
    }
    let d = mu1.len();
    if mu2.len() != d || sigma1.dim() != d || sigma2.dim() != d {
        return Err(Error::config("means and covariances must share one dimension"));
    }
    let h = n / 2;
    let mut data = DMatrix::zeros(n, d);
    for (class, (mu, sigma)) in [(mu1, &sigma1), (mu2, &sigma2)].into_iter().enumerate() {
        let mut s = rng::stream(seed, "gmm", &[class as u64]);
        let g = rng::normal_matrix(&mut s, h, d);
        let mut block = g * sigma.principal_sqrt();
        for mut row in block.row_iter_mut() {
            row += mu.transpose();
        }
        data.rows_mut(class * h, h).copy_from(&block);
    }
    let labels = DVector::from_fn(n, |i, _| if i < h { 1.0 } else { -1.0 });
    Ok(GmmDataset {
        n,
        d,
        data,
        labels,
        mu1: mu1.clone(),
        mu2: mu2.clone(),
        sigma1,
        sigma2,
    })
}

/// One column per matrix column with headers `c0, c1, ...`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut vals = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            vals.push(field.trim().parse::<f64>().map_err(|e| Error::shape(format!("{}: {e}", path.display())))?);
        }
        rows += 1;
    }
    if vals.len() != rows * cols {
        return Err(Error::shape(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}
