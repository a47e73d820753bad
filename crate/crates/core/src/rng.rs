//! Seed derivation. Every random quantity in the crate is a pure function of
//! a 64-bit seed, and per-trial seeds are a counter-based hash of
//! `(master_seed, trial_index)` so trials can run in any order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TrialRng = Xoshiro256PlusPlus;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of `(parent, index)`; distinct indices give unrelated streams.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Sub-streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Design = 1,
    Coefficients = 2,
    Noise = 3,
}

pub fn stream_seed(trial_seed: u64, stream: Stream) -> u64 {
    derive_seed(trial_seed, stream as u64)
}

pub fn rng(seed: u64) -> TrialRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}
