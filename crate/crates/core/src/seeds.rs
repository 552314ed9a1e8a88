//! Deterministic seed derivation.
//!
//! All randomness in the pipeline flows from a single root seed. Sub-streams
//! are derived by hashing `(root, purpose-label, parts...)` with SHA-256, so
//! every (topology, sample) pair or (method, run) pair owns an independent
//! RNG stream whose output does not depend on execution order or thread
//! count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(root: u64, label: &str, parts: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    h.finalize().into()
}

pub fn derive_rng(root: u64, label: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(root, label, parts))
}

/// Derived sub-seed, for handing a whole component its own seed space.
pub fn derive_u64(root: u64, label: &str, parts: &[u64]) -> u64 {
    let bytes = derive_seed(root, label, parts);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
