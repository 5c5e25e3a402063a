//! Seeding helpers. Every stochastic task gets its own ChaCha stream derived
//! from a master seed and a task index, so parallel work is reproducible no
//! matter how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of task `index` from `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(index.wrapping_add(1))))
}

/// Seed for a task addressed by a path of indices, e.g. (iteration, parameter, sign).
pub fn path_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &i| child_seed(s, i))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
