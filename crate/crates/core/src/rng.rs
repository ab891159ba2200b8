//! Per-path random streams.
//!
//! Path `p` of a run seeded with `seed` always draws from ChaCha8 stream `p`
//! of key `seed`, independent of which worker simulates it.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub type PathRng = ChaCha8Rng;

pub fn path_rng(seed: u64, path: usize) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

pub fn standard_normal(rng: &mut PathRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut PathRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rand_distr::StandardUniform.sample(rng);
    lo + (hi - lo) * u
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
