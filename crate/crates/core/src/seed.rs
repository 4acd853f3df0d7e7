//! Stable seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! splitmix64 fold over a tuple of integers, so a stream depends only on
//! (global seed, purpose, indices) and never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Distinct constants keep streams for different jobs apart.
pub mod stream {
    pub const SUBJECT: u64 = 0x5355_424a;
    pub const SCAN_COUNT: u64 = 0x434e_5453;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const CONTRAST: u64 = 0x434f_4e54;
    pub const BATCH: u64 = 0x4241_5443;
    pub const TRANSFORM: u64 = 0x5452_4e53;
    pub const INIT: u64 = 0x494e_4954;
    pub const KMEANS: u64 = 0x4b4d_4e53;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Folds a tuple of integers into a single 64-bit seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A ChaCha8 stream for the given tuple.
pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parts))
}
