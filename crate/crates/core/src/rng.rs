//! Counter-based random streams.
//!
//! Every stream is a ChaCha12 keystream keyed by the master seed and selected
//! by a 64-bit stream id. Ids are derived by hashing a path of keys (replicate,
//! claim ordinal, purpose tag), so nested simulation loops draw from streams
//! that do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// What a derived stream is used for; part of the derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Replicate = 0x01,
    ReportingTimes = 0x11,
    PaymentTimes = 0x12,
    PaymentAmounts = 0x13,
    ReportingDelay = 0x14,
    NewClaims = 0x21,
    ExistingClaims = 0x22,
    Holdout = 0x31,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        RngStream {
            master_seed,
            stream_id: 0,
        }
    }

    /// Child stream for `(purpose, ordinal)` below this one.
    pub fn derive(&self, purpose: Purpose, ordinal: u64) -> RngStream {
        let mut h = splitmix64(self.stream_id ^ 0x6A09_E667_F3BC_C908);
        h = splitmix64(h ^ purpose as u64);
        h = splitmix64(h ^ ordinal);
        RngStream {
            master_seed: self.master_seed,
            stream_id: h,
        }
    }

    pub fn replicate(&self, index: u64) -> RngStream {
        self.derive(Purpose::Replicate, index)
    }

    /// The generator for this stream, positioned at the start of its keystream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        let mut state = self.master_seed;
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
