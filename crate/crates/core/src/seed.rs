//! Hierarchical seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a root seed
//! combined with a stage label and an index, so that stages can be rerun in
//! isolation and worker order never affects results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive a child seed from `parent`, a stage label and an index.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a(label)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, label: &str, index: u64) -> ChaCha8Rng {
    rng(derive(parent, label, index))
}
