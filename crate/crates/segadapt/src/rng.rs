//! Deterministic, addressable random streams.
//!
//! Every random decision in a run is drawn from a stream derived from the
//! master seed plus a label and optional indices. Streams are independent,
//! so skipping one code path (e.g. the consistency branch when its weight
//! is zero) never shifts the randomness consumed by another, and per-index
//! work can run on any thread while staying reproducible.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG from `seed` and an address made of a label
/// plus indices (e.g. `stream(seed, "ensemble", &[step, member])`).
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([label.len() as u8]);
    hasher.update(label.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
