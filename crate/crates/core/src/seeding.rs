//! Splittable, platform-independent seed derivation.
//!
//! Every random stream is a ChaCha12 generator keyed by
//! `SHA-256(LE64(master) || tag bytes || LE64(index))`; replica seeds use
//! the same construction truncated to the first eight little-endian bytes.
//! The construction is stated here in full so replays can be reproduced
//! outside this crate.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

fn digest(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// ChaCha12 stream for `(master, tag, index)`.
pub fn derive_rng(master: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(digest(master, tag, index))
}

/// 64-bit replica seed: first eight LE bytes of the digest with tag
/// `"replica"`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let bytes = digest(master, "replica", index);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}
