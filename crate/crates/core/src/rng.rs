//! Deterministic seed derivation.
//!
//! Every random stream in the simulator is a `ChaCha8Rng` seeded from a master
//! seed mixed with a list of integer tags (plane, row, column, trial index, ...).
//! Streams derived from distinct tag lists do not overlap in practice, so work
//! can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags separating the independent uses of a master seed.
pub mod tag {
    pub const SLM_VARIATION: u64 = 0x534c_4d00;
    pub const PD_VARIATION: u64 = 0x5044_0000;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const TILE: u64 = 0x5449_4c45;
    pub const DATA: u64 = 0x4441_5441;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const ARRAY: u64 = 0x4152_5259;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`. Order matters.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
