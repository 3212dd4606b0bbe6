//! Reproducible random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream. The key is
//! the master seed and the 64-bit stream id is a mix of a purpose label and an
//! index (replicate, row, ...), so results never depend on which worker runs a
//! task or in which order tasks finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct labels never share a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Resample = 1,
    Generate = 2,
    Synthetic = 3,
    InventoryRow = 4,
    InventoryCovariates = 5,
    Reference = 6,
    Replication = 7,
    Replicate = 8,
    Study = 9,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_id(label: Stream, index: u64) -> u64 {
    mix(mix(label as u64) ^ index)
}

/// Random generator for `(seed, label, index)`.
pub fn stream(seed: u64, label: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label, index));
    rng
}

/// Child seed for nested tasks (e.g. an outer replication that runs its own
/// bootstrap).
pub fn derive_seed(seed: u64, label: Stream, index: u64) -> u64 {
    mix(seed ^ stream_id(label, index))
}
