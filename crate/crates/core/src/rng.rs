//! Seeding.
//!
//! Every stochastic component draws from `ChaCha8Rng`. A run's stream is
//! keyed by the experiment name and the run index, so runs are reproducible
//! on their own and independent of how many other runs execute alongside.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream for run `run` of `experiment` under the base seed `seed`.
pub fn stream(experiment: &str, seed: u64, run: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(experiment, seed, run))
}

/// 64-bit key from the experiment name (FNV-1a), seed and run index.
pub fn mix(experiment: &str, seed: u64, run: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in experiment.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(h ^ splitmix(seed ^ splitmix(run.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
