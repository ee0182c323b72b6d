//! Path-addressed random streams.
//!
//! A stream is named by a global seed plus a derivation path of
//! `(label, index)` pairs. The generator for a stream is ChaCha12 keyed by a
//! SHA-256 digest of that name, so a stream's output depends only on its
//! name and never on how many other streams were drawn before it.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"lidaraug.rng.v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    global_seed: u64,
    path: Vec<(String, u64)>,
}

impl RngStream {
    pub fn new(global_seed: u64) -> Self {
        Self {
            global_seed,
            path: Vec::new(),
        }
    }

    pub fn global_seed(&self) -> u64 {
        self.global_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Child stream one level below this one.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_string(), index));
        Self {
            global_seed: self.global_seed,
            path,
        }
    }

    /// 256-bit key naming this stream.
    pub fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(self.global_seed.to_le_bytes());
        for (label, index) in &self.path {
            // Length-prefixing keeps ("ab", 0) / ("a", 0)("b", 0) style paths apart.
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        h.finalize().into()
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key())
    }
}

pub fn derive_stream(parent: &RngStream, label: &str, index: u64) -> RngStream {
    parent.derive(label, index)
}
