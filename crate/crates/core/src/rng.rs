//! Deterministic RNG streams keyed by run coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, key...)`. Same inputs give the same stream.
pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &k in key {
        h = splitmix(h ^ splitmix(k));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stream purposes, so different consumers never share a stream.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const STARTS: u64 = 2;
    pub const WALK: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const TRIPLET: u64 = 5;
    pub const INFER: u64 = 6;
    pub const ANALYSIS: u64 = 7;
}
