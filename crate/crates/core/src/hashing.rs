//! Content hashing and keyed random streams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose seed
//! is derived from a fixed tuple (run seed, purpose, identifiers). Streams never
//! depend on scheduling or on how many other draws happened elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Incremental SHA-256 over length-prefixed fields, so that `("ab", "c")` and
/// `("a", "bc")` hash differently.
#[derive(Clone, Default)]
pub struct FieldHasher {
    inner: Sha256,
}

impl FieldHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_le_bytes())
    }

    pub fn finish(&self) -> [u8; 32] {
        let out = self.inner.clone().finalize();
        let mut buf = [0u8; 32];
        buf.copy_from_slice(out.as_slice());
        buf
    }

    pub fn finish_hex(&self) -> String {
        hex::encode(self.finish())
    }
}

/// SHA-256 of raw bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Deterministic RNG for `(seed, purpose, parts...)`.
pub fn keyed_rng(seed: u64, purpose: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = FieldHasher::new();
    h.u64(seed).str(purpose);
    for p in parts {
        h.field(p);
    }
    ChaCha8Rng::from_seed(h.finish())
}
