//! Seed discipline: one master seed, independent labelled streams.
//!
//! Each stream seed is the SHA-256 digest of the master seed (little
//! endian) followed by the label bytes, so adding a stream never perturbs
//! the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, label))
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    pub coin: ChaCha8Rng,
    pub sample: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        Self {
            coin: stream(master, "coin"),
            sample: stream(master, "sample"),
            noise: stream(master, "noise"),
        }
    }
}
