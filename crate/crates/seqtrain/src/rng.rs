//! Deterministic seed derivation. Every random stream in the framework is a
//! ChaCha8 generator seeded from (base seed, purpose tags) so runs replay
//! bit-identically and streams never alias across epochs, workers, or tensors.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining tag words.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapses a base seed plus tag words into one stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &t in tags {
        acc = mix(acc ^ t);
    }
    acc
}

/// FNV-1a over a string, for per-tensor seed tags.
pub fn name_tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn new_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
