//! Named seed streams.
//!
//! One global seed fans out into independent per-stage and per-group streams
//! by hashing the stream name together with the parent seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive(parent: u64, stream: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(parent: u64, stream: &str) -> StreamRng {
    rng(derive(parent, stream))
}

/// Uniform sample of `n` indices out of `len` without replacement, returned
/// in ascending order. Returns every index when `n >= len`.
pub fn sample_indices(rng: &mut StreamRng, len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut picked = rand::seq::index::sample(rng, len, n).into_vec();
    picked.sort_unstable();
    picked
}

/// Serde adapter writing a u64 seed as a decimal string; TOML integers are
/// signed 64-bit.
pub mod decimal {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
