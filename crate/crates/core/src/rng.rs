//! Counter-based random stream derivation.
//!
//! Every stochastic component gets its own stream whose seed is a hash of a
//! master seed and a path of integer labels (cell, replication, purpose...).
//! Streams never depend on how many draws another component consumed, which
//! keeps results identical regardless of scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of labels into a new seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(seed: u64, labels: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, labels))
}
