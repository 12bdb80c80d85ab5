//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by `(seed, tag, index...)` so
//! results never depend on iteration or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to fold identifiers like participant ids into seeds.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

pub fn rng_for(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Stream tags, one per consumer.
pub mod tag {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const HEAD: u64 = 8;
    pub const MLP: u64 = 9;
    pub const VARIANTS: u64 = 10;
}
