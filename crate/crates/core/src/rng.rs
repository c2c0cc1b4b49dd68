//! Deterministic per-replicate random streams.
//!
//! Every replicate `k` of an experiment seeded with `seed` draws from the
//! ChaCha8 keystream keyed by `seed` at stream id `k`. ChaCha is
//! counter-based, so streams are independent of each other and of the order
//! in which replicates are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Generator for replicate `stream` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent experiment seed for a named sub-run (calibration,
/// oracle, ...) via SplitMix64 finalization.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draws via the Ziggurat sampler of `rand_distr`.
pub fn standard_normals(rng: &mut ChaCha8Rng, count: usize) -> impl Iterator<Item = f64> + '_ {
    (0..count).map(move |_| StandardNormal.sample(rng))
}
