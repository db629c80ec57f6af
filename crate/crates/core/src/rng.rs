//! Seeded random streams.
//!
//! Every randomized component draws from its own stream, identified by a
//! master seed and a label. The stream key is hashed with SHA-256 into a
//! ChaCha8 seed, so streams are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: String,
}

impl RngSeed {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        Self {
            seed,
            stream_id: stream_id.into(),
        }
    }

    /// A sub-stream of this one, e.g. `forecast` -> `forecast/2016`.
    pub fn child(&self, label: impl std::fmt::Display) -> Self {
        Self {
            seed: self.seed,
            stream_id: format!("{}/{}", self.stream_id, label),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.stream_id.len() as u64).to_le_bytes());
        hasher.update(self.stream_id.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(key)
    }
}
