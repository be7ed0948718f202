//! Deterministic random-stream derivation.
//!
//! One top-level experiment seed fans out into independent streams, each
//! keyed by a purpose string plus integer salts (round, device, model,
//! class, ...). Streams are ChaCha8 generators seeded with a
//! splitmix64-style hash of `(master, purpose, salts)`, so any stream can
//! be reconstructed in isolation and results never depend on the order
//! in which streams are consumed.
//!
//! Derivation: `h = mix(master ^ fnv1a64(purpose))`, then for each salt
//! `h = mix(h ^ (salt + GAMMA))`, where `mix` is the splitmix64
//! finalizer and `GAMMA = 0x9e3779b97f4a7c15`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed for the stream identified by `purpose` and `salts`.
pub fn derive_seed(master: u64, purpose: &str, salts: &[u64]) -> u64 {
    let mut h = mix(master ^ fnv1a64(purpose.as_bytes()));
    for &s in salts {
        h = mix(h ^ s.wrapping_add(GAMMA));
    }
    h
}

/// Open the deterministic stream identified by `purpose` and `salts`.
pub fn stream(master: u64, purpose: &str, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, salts))
}
