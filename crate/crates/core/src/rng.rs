//! Deterministic seeding.
//!
//! Every randomized routine in this crate owns a ChaCha8 generator created
//! from an explicit `u64` seed. Concurrent tasks never share generator state:
//! each task derives its own seed from a master seed and a textual tag via
//! `derive_seed`, which hashes the tag with FNV-1a and mixes it into the
//! master seed with a SplitMix64 finalizer. Reusing a `(master, tag)` pair
//! always yields the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a task seed from a master seed and a stable tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}

/// Generator for a derived `(master, tag)` stream.
pub fn rng_for(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag))
}

/// Generator seeded directly.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(42, "train"), derive_seed(42, "train"));
        assert_ne!(derive_seed(42, "train"), derive_seed(42, "search"));
        assert_ne!(derive_seed(42, "train"), derive_seed(43, "train"));
    }

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..8).map(|_| 0).collect();
        let mut r1 = rng_for(7, "x");
        let mut r2 = rng_for(7, "x");
        let s1: Vec<u64> = a.iter().map(|_| r1.random()).collect();
        let s2: Vec<u64> = a.iter().map(|_| r2.random()).collect();
        assert_eq!(s1, s2);
    }
}
