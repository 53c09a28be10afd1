//! Seed derivation. Every random draw in a run comes from a ChaCha stream
//! whose seed is a hash of `(global seed, purpose, indices...)`, so any
//! single draw can be replayed without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Order-sensitive hash of a list of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(parts))
}

pub fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Stable numeric tags for seed derivation.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const CURRICULUM: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SAMPLER: u64 = 4;
    pub const INIT: u64 = 5;
    pub const CODEC: u64 = 6;
}
