use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Seeded generator: ChaCha8 keyed from a `u64` seed.
///
/// ChaCha8 output is defined by its specification, independent of platform
/// and word size, so a seed pins every weight in a model.
#[derive(Clone, Debug)]
pub struct Prng {
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform(lo, hi))
    }
}

/// Zero-mean Gaussian matrix with the given standard deviation.
pub fn gaussian_init(rng: &mut Prng, rows: usize, cols: usize, stddev: f64) -> Result<Matrix> {
    if !stddev.is_finite() || stddev <= 0.0 {
        return Err(Error::invalid(
            "gaussian_init",
            format!("stddev must be positive and finite, got {stddev}"),
        ));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| stddev * rng.standard_normal()))
}
