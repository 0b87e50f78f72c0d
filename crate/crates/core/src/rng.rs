//! Keyed, reproducible random streams.
//!
//! A stream is identified by `(seed, label)`. The 32-byte ChaCha8 key is
//! `SHA-256("powertalk/substream/v1" || seed as little-endian u64 || label)`,
//! so every label gets its own independent generator and the order in which
//! streams are created never changes what any of them produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator type handed out by [`derive_substream`].
pub type Stream = ChaCha8Rng;

const DOMAIN: &[u8] = b"powertalk/substream/v1";

pub fn derive_substream(seed: u64, label: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// A seed plus a label prefix; children extend the prefix with `/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
    prefix: String,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Substreams {
            seed,
            prefix: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn join(&self, label: &str) -> String {
        if self.prefix.is_empty() {
            label.to_string()
        } else {
            format!("{}/{}", self.prefix, label)
        }
    }

    pub fn child(&self, label: &str) -> Substreams {
        Substreams {
            seed: self.seed,
            prefix: self.join(label),
        }
    }

    pub fn stream(&self, label: &str) -> Stream {
        derive_substream(self.seed, &self.join(label))
    }
}
