//! Seed plumbing. Every random stream in the simulator is a ChaCha8 generator
//! whose seed is derived from the experiment seed and a tuple of stream tags,
//! so results never depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used by the engine.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const PROFILES: u64 = 4;
    pub const TRACES: u64 = 5;
    pub const SELECTION: u64 = 6;
    pub const LOCAL_TRAINING: u64 = 7;
    pub const PREDICTOR_NOISE: u64 = 8;
    pub const STRAGGLER_PROBE: u64 = 9;
    pub const DELAYS: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with an ordered list of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tags: &[u64]) -> SimRng {
    rng_from(derive_seed(base, tags))
}
