//! Counter-style random streams.
//!
//! Every stochastic decision in a run is drawn from a ChaCha stream keyed by
//! `(experiment_seed, purpose, client, round)`. Streams never depend on the
//! order in which clients are processed, so parallel and serial execution
//! produce the same bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ClientSampling = 1,
    LocalBatches = 2,
    TaskData = 3,
    Replacement = 4,
    Trial = 5,
    HeldOut = 6,
    Bootstrap = 7,
    Partition = 8,
    Plan = 9,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(seed), |acc, &c| mix64(acc ^ mix64(c)))
}

/// Stream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[purpose as u64, a]));
    rng.set_stream(b);
    rng
}
