//! Seeded, per-purpose random streams.
//!
//! Every random draw in the crate (parameter init, dropout masks, dataset
//! shuffles) comes from its own ChaCha8 stream derived from a user seed, a
//! purpose tag, and a salt (epoch index, class id, ...). Streams for
//! different purposes never interleave, so adding a draw in one place cannot
//! perturb results elsewhere — a requirement for bit-reproducible runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Dropout,
    Shuffle,
    Split,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x496e6974,
            Purpose::Dropout => 0x44726f70,
            Purpose::Shuffle => 0x53687566,
            Purpose::Split => 0x53706c69,
            Purpose::Synthetic => 0x53796e74,
        }
    }
}

// splitmix64: full-period 64-bit mixer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive the stream for `(seed, purpose, salt)`.
pub fn stream(seed: u64, purpose: Purpose, salt: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ purpose.tag()) ^ splitmix64(salt));
    ChaCha8Rng::seed_from_u64(mixed)
}
