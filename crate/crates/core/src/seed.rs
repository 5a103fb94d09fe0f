//! Seed derivation shared by every randomized stage.
//!
//! A single user seed feeds all stages. Each stage derives its own 64-bit
//! seed as the first eight bytes (little endian) of
//! `SHA-256(seed.to_le_bytes() || stage)`, so adding a stage never perturbs
//! the random streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Deterministic generator for item `index` of a stage: ChaCha8 seeded with
/// `seed`, positioned on stream `index`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
