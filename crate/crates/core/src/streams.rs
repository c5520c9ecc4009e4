//! Seed-derived hashing and random sub-streams.
//!
//! Every random choice in the pipeline is a pure function of the run seed, a
//! domain tag and a key (user id or item), so results never depend on
//! iteration order or on which other users happen to be present.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use siphasher::sip128::{Hasher128, SipHasher13};
use std::hash::Hasher;

pub type StreamRng = ChaCha12Rng;

const KEY_SALT: u64 = 0x6470_7375_5f6b_6579; // "dpsu_key"

/// Keyed 128-bit SipHash-1-3 of `(domain, key)` under `seed`.
pub fn keyed_hash128(seed: u64, domain: &str, key: &[u8]) -> u128 {
    let mut hasher = SipHasher13::new_with_keys(seed, KEY_SALT);
    hasher.write(domain.as_bytes());
    // domain tags never contain 0xff, so the encoding is injective
    hasher.write_u8(0xff);
    hasher.write(key);
    hasher.finish128().as_u128()
}

/// Independent ChaCha stream for `(seed, domain, key)`.
pub fn sub_stream(seed: u64, domain: &str, key: &[u8]) -> StreamRng {
    let h = keyed_hash128(seed, domain, key);
    let mut material = [0u8; 32];
    material[..16].copy_from_slice(&h.to_le_bytes());
    material[16..].copy_from_slice(&keyed_hash128(seed ^ KEY_SALT, domain, key).to_le_bytes());
    StreamRng::from_seed(material)
}
