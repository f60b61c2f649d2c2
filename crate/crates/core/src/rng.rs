//! Seed derivation for deterministic, replayable substreams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` whose seed is derived
//! from a base seed, a purpose tag, and a list of indices. Streams are keyed
//! by position rather than threaded through the call graph, so re-running any
//! slice of the pipeline (one step, one iteration, one eval) reproduces the
//! same draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// 64-bit FNV-1a. Stable across platforms and compiler versions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer, used to decorrelate nearby keys.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a substream seed from `(base, tag, indices)`.
pub fn derive_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = mix(base) ^ fnv1a64(tag.as_bytes());
    for &i in indices {
        h = mix(h ^ mix(i));
    }
    mix(h)
}

/// A fresh RNG for the substream identified by `(base, tag, indices)`.
pub fn substream(base: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, indices))
}
