//! Seeded, hierarchically keyed random substreams.
//!
//! A [`RandomStream`] is a 256-bit ChaCha key derived by hashing a root seed
//! with a path of labels and indices. Identical paths give identical draws and
//! distinct paths give independent streams, so every consumer (a matrix column,
//! a simulated null dataset, a trial) can own its randomness regardless of the
//! order or thread in which it runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
    key: [u8; 32],
}

impl std::fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RandomStream(seed={}, key={:02x}{:02x}..)", self.seed, self.key[0], self.key[1])
    }
}

impl RandomStream {
    /// Root stream for `seed` under `label` (e.g. `"theta"`, `"null-sim"`).
    pub fn new(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"mcp-stream-v1");
        h.update(seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        RandomStream {
            seed,
            key: h.finalize().into(),
        }
    }

    /// The root seed this stream descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"L");
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        RandomStream {
            seed: self.seed,
            key: h.finalize().into(),
        }
    }

    pub fn indexed(&self, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"I");
        h.update(index.to_le_bytes());
        RandomStream {
            seed: self.seed,
            key: h.finalize().into(),
        }
    }

    /// Generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key)
    }

    /// Generator for numbered sub-stream `id` (the ChaCha nonce).
    pub fn rng_for(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }
}
