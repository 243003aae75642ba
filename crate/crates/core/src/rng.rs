//! Seed derivation for independent, schedule-free random streams.
//!
//! Every unit of parallel work (a SIMEX cell, a cohort chain, a replicate)
//! derives its own stream from the run seed and a tuple of tags, so results
//! do not depend on the order in which workers pick up tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a sequence of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix(seed ^ 0x9e37_79b9_7f4a_7c15), |acc, &t| {
            mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix(t))
        })
}

/// Stable 64-bit hash of a string label (FNV-1a).
pub fn label_tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tags))
}
