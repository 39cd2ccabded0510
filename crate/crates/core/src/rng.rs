//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator addressed by
//! `(seed, domain, index)`. The domain separates unrelated consumers (bank
//! rotation, per-sample draws, initialization, Monte Carlo) and the index
//! selects an independent ChaCha stream, so work split across threads draws
//! the same numbers regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Consumer tags mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Bank = 0x4241_4e4b,
    SampleId = 0x5341_4d50,
    SampleOod = 0x4f4f_4453,
    Init = 0x494e_4954,
    MonteCarlo = 0x4d43_4d43,
    Trial = 0x5452_4941,
    System = 0x5353_4d00,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain as u64)));
    rng.set_stream(index);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(rng)).collect()
}

/// Uniform draw in `[-bound, bound]`.
#[inline]
pub fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    rng.random_range(-bound..=bound)
}
