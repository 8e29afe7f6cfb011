//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic decision in a run draws from a stream keyed by
//! `(run seed, cycle, purpose)`. Two schemes that share a purpose therefore
//! see identical randomness, which keeps paired comparisons tight.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Damage = 1,
    Scouts = 2,
    AllocationOrder = 3,
    Baseline = 4,
    Routing = 5,
    Abort = 6,
    Scenario = 7,
    Placement = 8,
    Tuning = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit sub-seed from a base seed and a list of keys.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream(seed: u64, cycle: u32, purpose: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, &[cycle as u64, purpose as u64]))
}

pub fn stream_with(seed: u64, cycle: u32, purpose: Stream, extra: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(
        seed,
        &[cycle as u64, purpose as u64, extra],
    ))
}
