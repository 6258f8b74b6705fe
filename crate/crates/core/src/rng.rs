//! Seeding utilities.
//!
//! All randomness in the crate comes from [`ChaCha8Rng`] (the ChaCha stream
//! cipher with 8 rounds, as implemented by `rand_chacha`), which produces the
//! same stream on every platform. Sub-streams are derived from a root seed
//! with [`derive_seed`], keyed by a label, so adding a new consumer never
//! shifts the stream of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a root seed and a textual label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = splitmix64(root);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// Derive a sub-seed from a root seed and a numeric index.
pub fn derive_index(root: u64, index: u64) -> u64 {
    splitmix64(splitmix64(root) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(root, label))
}

/// `n` i.i.d. standard normal draws.
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
