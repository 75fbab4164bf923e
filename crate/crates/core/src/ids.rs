//! Stable identifiers and seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const FIELD_SEP: &[u8] = &[0x1f];

/// Stable 64-bit hash of a sequence of string fields.
pub fn stable_hash64(fields: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            h.update(FIELD_SEP);
        }
        h.update(f.as_bytes());
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Article identity: the (lang, title, snapshot) triple hashed to 16 hex digits.
pub fn article_id(lang: &str, title: &str, snapshot: &str) -> String {
    format!("{:016x}", stable_hash64(&[lang, title, snapshot]))
}

/// Per-record seed: `global_seed XOR hash(record_id)`.
pub fn derive_seed(global_seed: u64, record_id: &str) -> u64 {
    global_seed ^ stable_hash64(&[record_id])
}

/// The generator used for every stochastic step. ChaCha8 keeps streams
/// identical across platforms and crate versions.
pub fn rng_for(global_seed: u64, record_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, record_id))
}
