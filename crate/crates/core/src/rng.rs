//! Named, seed-derived random substreams.
//!
//! All randomness in a run flows from the single scenario seed. Each
//! consumer derives its own stream from `(seed, name)` (plus an index for
//! per-frame streams), so adding or removing one consumer never perturbs
//! the draws seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stream for a named consumer (e.g. "renderer", "manual-hand").
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(name.as_bytes())))
}

/// Indexed stream, e.g. one per rendered frame. Stable under reordering:
/// frame k draws the same noise whether frames render serially or not.
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        splitmix64(seed ^ fnv1a64(name.as_bytes())) ^ index,
    ))
}
