//! Named random substreams.
//!
//! Every stochastic stage derives its generator from a root seed plus a path of
//! labels (stage, track id, chain index, ...). The derivation hashes the path,
//! so streams are independent of scheduling order and of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive an independent generator for `(root, labels...)`.
pub fn substream(root: u64, labels: &[&str]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(b"navsst-substream-v1");
    hasher.update(root.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Derive a child 64-bit seed, for APIs that take a plain seed.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    use rand::RngCore;
    substream(root, labels).next_u64()
}
