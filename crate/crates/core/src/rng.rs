//! Seed derivation and Gaussian sampling helpers.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 256-bit
//! seed is `SHA-256(master || tag || index_0 || index_1 || ...)`, with the
//! master seed and indices encoded little-endian and the tag as UTF-8 bytes
//! followed by a zero byte. Distinct `(tag, indices)` tuples therefore give
//! independent substreams, and results never depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Master seed used when a configuration does not provide one.
pub const DEFAULT_SEED: u64 = 2024;

/// Derive a 32-byte seed from `(master, tag, indices)`.
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// A derived seed folded to 64 bits, for APIs that take a plain integer seed.
pub fn derive_u64(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let seed = derive_seed(master, tag, indices);
    u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"))
}

/// Independent ChaCha8 stream for `(master, tag, indices)`.
pub fn stream(master: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, tag, indices))
}

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Row-major fill so that the realized matrix does not depend on nalgebra's storage order.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
