//! Per-item PRNG derivation.
//!
//! Every random decision in the harness is keyed by `(seed, item id)` instead
//! of drawing from one global stream, so the outcome for an image does not
//! depend on scheduling or on which other images are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Build a generator whose stream depends only on `seed` and `key`.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}
