//! Labeled sub-seed derivation: one master seed splits into independent
//! streams so toggling one arm never perturbs another's randomness.

use sha2::{Digest, Sha256};

/// Independent seeds for each randomness consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubSeeds {
    pub data: u64,
    pub init: u64,
    pub batching: u64,
    pub attack: u64,
    pub defense: u64,
}

fn keyed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"vflpriv:");
    hasher.update(label.as_bytes());
    hasher.update(master.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

impl SubSeeds {
    pub fn derive(master: u64) -> Self {
        SubSeeds {
            data: keyed(master, "data"),
            init: keyed(master, "init"),
            batching: keyed(master, "batching"),
            attack: keyed(master, "attack"),
            defense: keyed(master, "defense"),
        }
    }
}
