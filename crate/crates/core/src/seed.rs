//! Named-stream seed derivation.
//!
//! Every random decision in the toolkit draws from a child generator derived
//! from a single master seed and a stream name. Adding a new consumer with a
//! new name never perturbs the sequences handed to existing consumers, which
//! keeps runs reproducible as the pipeline grows.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from the master seed and a stream name.
pub fn derive(master: u64, name: &str) -> u64 {
    splitmix(splitmix(master) ^ fnv1a(name.as_bytes()))
}

/// Seeded generator for the named stream.
pub fn rng(master: u64, name: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, name))
}
