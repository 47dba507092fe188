//! Seed derivation.
//!
//! One global seed fans out into independent per-purpose streams. The derived
//! seed is the first eight bytes (little endian) of
//! `SHA-256(global_seed_le ‖ purpose ‖ 0x00 ‖ index_le)`, so every component
//! (split, sample, init, augment, dropout, ...) can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The seeded stream used everywhere in the crate.
pub type Stream = ChaCha8Rng;

pub fn derive_seed(global: u64, purpose: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(global: u64, purpose: &str, index: u64) -> Stream {
    Stream::seed_from_u64(derive_seed(global, purpose, index))
}

pub fn stream_from_seed(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
