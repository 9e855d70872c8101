//! Seed derivation.

use sha2::{Digest, Sha256};

/// First 8 bytes (little-endian) of SHA-256 over the canonical JSON array
/// `[master, cycle, modality, class]`.
pub fn derive_seed(master: u64, cycle: u64, modality: u64, class: u64) -> u64 {
    let text = serde_json::to_string(&[master, cycle, modality, class]).expect("array serializes");
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Seed for a named stage (fusion, end-to-end, controller) of a cycle.
pub fn stage_seed(master: u64, cycle: u64, stage: &str) -> u64 {
    let text = serde_json::to_string(&(master, cycle, stage)).expect("tuple serializes");
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
