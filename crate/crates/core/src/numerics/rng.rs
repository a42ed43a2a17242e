use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::DenseMatrix;

/// Seeded sample stream: ChaCha8 for bits, ziggurat standard normals from
/// `rand_distr`. Identical seeds give identical streams within one build.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, e.g. one per trial.
    pub fn fork(&mut self) -> Self {
        Self::new(self.inner.random())
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::new(rows, cols, self.normal_vec(rows * cols))
            .expect("gaussian samples are finite")
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n`, in sampling order.
    pub fn choose_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        sample(&mut self.inner, n, k).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// Uniform direction on the unit sphere in ℝⁿ.
    pub fn unit_sphere(&mut self, n: usize) -> Vec<f64> {
        loop {
            let x = self.normal_vec(n);
            let norm = super::norm2(&x);
            if norm > 1e-300 {
                return x.into_iter().map(|v| v / norm).collect();
            }
        }
    }
}
