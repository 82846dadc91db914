//! Deterministic seeded randomness, organized as independent named streams.
//!
//! Every random decision in the crate is drawn from a stream derived as
//! `hash(root_seed, purpose-tag, ids...)`. Streams never share state, so
//! augmentation, dropout masks, subsampling, batch sampling, and label-flip
//! noise are mutually independent: changing how one consumer draws can never
//! shift another consumer's sequence, and any single decision can be replayed
//! in isolation. This is what makes per-example parallelism
//! schedule-deterministic.

use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

pub use rand::Rng;
pub use rand_chacha::ChaCha8Rng;

/// Root seed plus the derivation rule for per-purpose streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    root_seed: u64,
}

impl SeededRng {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    /// Full-width stream for a (tag, ids) key.
    pub fn stream(&self, tag: &str, ids: &[u64]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.root_seed.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        for id in ids {
            hasher.update(id.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// 64-bit key for a (tag, ids) stream, for consumers that hash further
    /// (e.g. lazy per-unit dropout masks).
    pub fn key(&self, tag: &str, ids: &[u64]) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.root_seed.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        for id in ids {
            hasher.update(id.to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// SplitMix64 finalizer. Stateless mixing for counter-based draws.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform f64 in [0, 1) from a key/counter pair, with no stream state.
pub fn unit_uniform(key: u64, counter: u64) -> f64 {
    let h = mix64(key ^ mix64(counter));
    // 53 high bits -> [0, 1)
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
