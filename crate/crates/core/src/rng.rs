//! Seed streams.
//!
//! One master seed feeds several independent ChaCha streams so that switching
//! the twin on or off never shifts the real-plant noise sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialDesign = 1,
    Measurement = 2,
    TwinNoise = 3,
    GpStarts = 4,
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream as u64);
    rng
}

/// Derives the master seed of the `index`-th Monte Carlo batch.
pub fn batch_seed(master_seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
