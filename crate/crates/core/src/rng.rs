//! Per-label random streams.
//!
//! Each particle draws from its own ChaCha stream keyed on `(seed, label)`,
//! so a subtree's randomness does not depend on its siblings or on the order
//! in which the forest is explored.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labels::Label;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

pub fn label_key(seed: u64, label: &Label) -> u64 {
    let mut h = splitmix64(seed);
    for &k in label.path() {
        h = mix(h, u64::from(k) + 1);
    }
    mix(h, label.generation() as u64)
}

pub fn particle_stream(seed: u64, label: &Label) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(label_key(seed, label))
}

/// Seed of replication `rep` within a batch seeded by `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    mix(seed ^ 0xA5A5_5A5A_C3C3_3C3C, rep)
}

/// Independent sub-seed for a named purpose within a replication.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(splitmix64(seed), tag ^ 0x5EED_0000_0000_0000)
}
