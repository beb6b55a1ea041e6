//! Seeded Gaussian data for tests, benchmarks and toy weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal values from a ChaCha8 stream.
pub fn gaussian_vec(n: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Counter-based noise: the stream depends only on `(seed, index)`, never on
/// how many values were drawn before or on which thread asks.
pub fn keyed_gaussian_vec(n: usize, seed: u64, index: u64) -> Vec<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}
