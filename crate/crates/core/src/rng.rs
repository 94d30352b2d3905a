//! Seeded, splittable random streams.
//!
//! A stream is identified by a master seed plus a stream index, so any
//! number of independent generators can be derived without sharing state.
//! Rollout `i` of an evaluation always gets the same streams regardless of
//! which worker thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags multiplexed into the stream index.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Purpose {
    Environment = 0,
    Policy = 1,
    Perturbation = 2,
    Init = 3,
}

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn tagged(seed: u64, index: u64, purpose: Purpose) -> StreamRng {
    stream(seed, index.wrapping_mul(4).wrapping_add(purpose as u64))
}

/// SplitMix64 finalizer, used to derive child seeds from (seed, counter).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws an index from a discrete distribution given by `probs`.
pub(crate) fn sample_index<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last
    // index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
