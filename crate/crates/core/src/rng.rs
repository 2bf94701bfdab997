//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a 64-bit
//! seed mixed with integer labels, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels; keep them distinct so sub-streams never alias.
pub mod label {
    pub const WEIGHTS: u64 = 0x5745_4947;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const DATA: u64 = 0x4441_5441;
    pub const KERNEL_MC: u64 = 0x4b4d_4331;
    pub const TEST: u64 = 0x5445_5354;
    pub const DIRECTIONS: u64 = 0x4449_5253;
    pub const REFERENCE: u64 = 0x5245_4652;
    pub const GRID: u64 = 0x4752_4944;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of labels into a new seed.
pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, labels))
}
