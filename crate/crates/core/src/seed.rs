//! Seed derivation.
//!
//! Every random stream in the pipeline is keyed by a master seed plus a
//! label, so independent consumers never share generator state and results
//! do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a parent seed and an ordered list of parts.
pub fn derive_seed(parent: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Derives a seed keyed by a single text label.
pub fn derive_named(parent: u64, label: &str) -> u64 {
    derive_seed(parent, &[label.as_bytes()])
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
