//! Deterministic random numbers.
//!
//! [`SeededRng`] wraps ChaCha8 (a counter-based stream cipher generator):
//! the 64-bit seed is expanded with `seed_from_u64` and the stream id selects
//! one of 2^64 independent ChaCha streams. Gaussians come from the Ziggurat
//! sampler of `rand_distr::StandardNormal`. Both algorithms are value-stable
//! across platforms for a fixed crate version (pinned by `Cargo.lock`).

use crate::scalar::Scalar;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// An independent generator on another stream of the same seed. The
    /// parent is left untouched.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    /// Draws a fresh seed from this generator, for handing out to workers.
    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_scalar<F: Scalar>(&mut self, mean: F, std: F) -> F {
        mean + std * F::lit(self.normal())
    }

    pub fn fill_normal<F: Scalar>(&mut self, out: &mut [F], std: F) {
        for x in out {
            *x = std * F::lit(self.normal());
        }
    }

    pub fn normal_vec<F: Scalar>(&mut self, n: usize, std: F) -> Vec<F> {
        let mut v = vec![F::zero(); n];
        self.fill_normal(&mut v, std);
        v
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
