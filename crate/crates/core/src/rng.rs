//! Seed derivation. Every random draw in the toolkit comes from a ChaCha
//! stream keyed by a root seed and a stream name, so components stay
//! reproducible independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams used by the pipeline.
pub mod streams {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const PLANNER: &str = "planner";
    pub const SHUFFLE: &str = "shuffle";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a stream name.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Derive a child seed from a root seed and an integer index.
pub fn derive_indexed(root: u64, index: u64) -> u64 {
    splitmix64(root.wrapping_add(splitmix64(index.wrapping_add(1))))
}

pub fn rng_for(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
