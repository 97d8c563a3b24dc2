//! Seed fan-out. Every restart or trial `k` of a run with master seed `s`
//! draws from `ChaCha8Rng::seed_from_u64(splitmix64(s ^ splitmix64(k)))`, so
//! streams are independent of scheduling and reproducible across
//! implementations that use the same generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the generator, echoed into run reports.
pub const PRNG_NAME: &str = "ChaCha8Rng seeded by splitmix64(master ^ splitmix64(index))";

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

pub fn stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, index))
}
