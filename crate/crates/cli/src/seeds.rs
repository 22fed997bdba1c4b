//! Splittable seed derivation.
//!
//! A child seed is the first eight bytes (little-endian) of
//! `SHA-256(parent.to_le_bytes() || label)`. Scenes derive from the master
//! seed with their id as label, insertions from the scene seed with their
//! augmentation id, and template captions from the insertion seed with the
//! level name. Outputs therefore do not depend on scheduling order.

use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
