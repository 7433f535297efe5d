//! Deterministic RNG derivation.
//!
//! Every stochastic component draws from a `ChaCha8` stream seeded through
//! [`derive_seed`], so that each (run, purpose, index) triple owns an
//! independent stream and replays are bit-exact regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over arbitrary bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from a master seed, a purpose tag, and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(tag.len() + 16);
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a(&buf)
}

/// Seeded stream for one (master, tag, index) triple.
pub fn rng_for(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Hash a slice of f64 by bit pattern (content identity for weights, scores).
pub fn hash_f64_slice(seed: u64, values: &[f64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    h
}
