//! Seed derivation.
//!
//! Every randomized step draws from its own ChaCha stream whose seed is a
//! pure function of the master seed and the step's coordinates, so results do
//! not depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed as `seed ^ hash(parts)`.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    let h = parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909u64, |acc, &p| mix64(acc ^ mix64(p)));
    seed ^ h
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
