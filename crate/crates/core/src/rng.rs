//! Seed derivation.
//!
//! Every random stream in a run is derived from one master seed plus a stream
//! tag and a counter, so streams are independent of evaluation order and a
//! resumed run sees exactly the same draws as an uninterrupted one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Sampling = 1,
    Evaluation = 2,
    Surrogate = 3,
    MonteCarlo = 4,
    Fallback = 5,
    Noise = 6,
    Landscape = 7,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an arbitrary sequence of words into one seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    mix(&[master, stream as u64, index])
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
