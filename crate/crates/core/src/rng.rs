//! Deterministic stream derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream derived
//! from the root seed and a label path (phase name, target id, episode index).
//! Streams are independent of execution order, so phases and per-target runs
//! can fan out across threads without perturbing each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a seeded generator for `root` and a label path such as
/// `["attack", "p17", "episode", "3"]`.
pub fn stream(root: u64, path: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for part in path {
        hasher.update([0xff]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child root seed, used when a sub-phase needs its own seed space.
pub fn child_seed(root: u64, path: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for part in path {
        hasher.update([0xfe]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
