//! Keyed random streams.
//!
//! Every consumer of randomness (sampling, noise, initialization, data
//! generation, attack trials) draws from its own ChaCha stream selected by
//! `(master seed, purpose, index)`. Streams are counter based, so the value a
//! consumer sees never depends on how much another consumer has drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// What a stream is used for. The discriminant is part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init = 1,
    Sampling = 2,
    Noise = 3,
    Split = 4,
    DataGen = 5,
    AttackTrial = 6,
    Aux = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        Self {
            seed,
            purpose,
            index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut s = (self.purpose as u64) << 56 ^ self.index;
        rng.set_stream(splitmix64(&mut s));
        rng
    }
}

/// Shorthand for `StreamKey::new(seed, purpose, index).rng()`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    StreamKey::new(seed, purpose, index).rng()
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
