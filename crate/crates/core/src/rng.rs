//! Seeded, stream-splittable random number generation.
//!
//! Backed by ChaCha8, a counter-based generator: a `(seed, stream)` pair
//! always yields the same draw sequence regardless of platform or of the
//! order in which parallel workers consume their streams.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent generator for sub-stream `index` of this one.
    pub fn split(&self, index: u64) -> Rng {
        let stream = self
            .stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index.wrapping_add(1));
        Rng::new(self.seed, stream)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return mean;
        }
        let d = rand_distr::Normal::new(mean, sigma).expect("finite sigma");
        rand_distr::Distribution::sample(&d, &mut self.inner)
    }

    /// `amount` distinct indices from `0..n`, sorted ascending.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        let mut v = rand::seq::index::sample(&mut self.inner, n, amount.min(n)).into_vec();
        v.sort_unstable();
        v
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
