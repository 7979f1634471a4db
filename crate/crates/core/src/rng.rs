//! Named, independent random streams derived from one master seed.
//!
//! Every randomized component (partitioning, initialization, per-client
//! augmentation, client selection) pulls its own stream keyed by a label,
//! so results are reproducible and independent of scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives independent [`ChaCha8Rng`] streams from a master seed and a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngFactory {
    master: u64,
}

impl RngFactory {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// A stream keyed by `label`. Identical (master, label) pairs yield
    /// identical streams across processes and platforms.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest(label))
    }

    /// A derived 64-bit seed, for components that take a plain seed.
    pub fn derive_seed(&self, label: &str) -> u64 {
        let d = self.digest(label);
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    fn digest(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }
}
