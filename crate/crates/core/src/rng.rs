//! Seed splitting.
//!
//! All randomness in a run flows from a single seed. Each consumer draws from
//! a named stream derived as `splitmix64(splitmix64(seed) ^ fnv1a(name))`,
//! expanded to a ChaCha8 key. Runs that share a seed therefore agree on every
//! stream, and streams never interleave across consumers — an ablation cell
//! differs from its sibling only in the ablated flag.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive the deterministic RNG for stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut state = splitmix64(seed) ^ fnv1a(name);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream names used by the artifact.
pub mod streams {
    /// Parameter initialization.
    pub const INIT: &str = "init";
    /// Sparse observation sampling.
    pub const SAMPLING: &str = "sampling";
    /// Observation noise injection.
    pub const NOISE: &str = "noise";
    /// Collocation point sampling (consumed sequentially across steps).
    pub const COLLOCATION: &str = "collocation";
    /// Boundary/initial constraint sampling.
    pub const CONSTRAINTS: &str = "constraints";
}
