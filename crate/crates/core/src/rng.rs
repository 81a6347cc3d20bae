//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a stream addressed by
//! `(purpose, sweep, mode, entity)` under one root seed. Streams are ChaCha8
//! keyed by the root seed with the address hashed into the 64-bit stream id,
//! so a draw depends only on its address and never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    ModeHyper = 2,
    LinkMatrix = 3,
    LambdaBeta = 4,
    Latent = 5,
    Alpha = 6,
    Synthetic = 7,
    Holdout = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    key: [u8; 32],
}

impl RngStreams {
    pub fn new(root_seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut s = root_seed;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        RngStreams { key }
    }

    pub fn stream(&self, purpose: Purpose, sweep: u64, mode: u64, entity: u64) -> ChaCha8Rng {
        let mut id = splitmix64(purpose as u64);
        for part in [sweep, mode, entity] {
            id = splitmix64(id ^ part);
        }
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }
}
