//! Seeding policy: one base seed per run, one ChaCha stream per consumer so
//! adding a consumer never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a tag into a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags for the independent random streams of one run.
pub mod streams {
    pub const DAG: u64 = 1;
    pub const FUNCTIONS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PILOT_NOISE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const VAL_FOLD: u64 = 8;
    pub const SHUFFLE: u64 = 9;
}
