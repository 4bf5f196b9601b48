//! Named deterministic random streams.
//!
//! Every consumer of randomness asks for a stream by `(seed, name)`, so adding
//! or reordering consumers never shifts the draws seen by another one.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// FNV-1a 64-bit hash of a byte string.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Independent generator for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}

/// A 64-bit seed derived from `(seed, name)`.
pub fn derive(seed: u64, name: &str) -> u64 {
    use rand::RngCore;
    stream(seed, name).next_u64()
}

/// Generator seeded directly from a 64-bit value (no stream split).
pub fn seeded(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
