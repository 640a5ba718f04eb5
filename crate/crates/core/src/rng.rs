//! Named, hierarchical RNG streams.
//!
//! A run has one master seed. Every consumer of randomness (generation per
//! sample, filling trials per sample and checkpoint, resampling, rollouts)
//! derives its own stream by path, e.g. `root(seed).child("gen").index(3)`.
//! Changing how many draws one consumer makes never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator behind every stream.
pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Identifier of a derived stream. Cheap to copy; turning it into an RNG is
/// deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId(pub u64);

impl StreamId {
    pub fn root(seed: u64) -> Self {
        StreamId(splitmix(seed))
    }

    pub fn child(self, label: &str) -> Self {
        StreamId(splitmix(self.0 ^ splitmix(fnv1a(label.as_bytes()))))
    }

    pub fn index(self, i: u64) -> Self {
        StreamId(splitmix(self.0.rotate_left(17) ^ splitmix(i.wrapping_add(0xA5A5))))
    }

    pub fn rng(self) -> Stream {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
