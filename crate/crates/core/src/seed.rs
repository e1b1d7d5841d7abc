//! Deterministic seed derivation for layered experiment reproducibility.
//!
//! Every random choice in the pipeline is driven by a `u64` seed derived
//! from its parent seed plus a salt, so any sequence, clip, or evaluation
//! run can be replayed in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Platform-independent and stable across releases.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a salt.
pub fn mix(parent: u64, salt: u64) -> u64 {
    splitmix64(parent ^ splitmix64(salt))
}

/// Derive a child seed from a parent seed and a string tag.
pub fn mix_str(parent: u64, tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(parent, h)
}

/// Seeded RNG used everywhere randomness is needed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
