//! Counter-based random streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by the master
//! seed and selected by `(index, purpose)`. A trial's draws therefore depend
//! only on its index, never on scheduling or on how many trials ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Cloud = 1,
    Spins = 2,
    Probes = 3,
    Ramsey = 4,
    Bootstrap = 5,
    Coupling = 6,
    Fixture = 7,
}

const PURPOSE_BITS: u32 = 4;

/// Stream for item `index` (a trial, a resample, ...) and `purpose`.
pub fn stream(master_seed: u64, index: u64, purpose: Purpose) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((index << PURPOSE_BITS) | purpose as u64);
    rng
}

/// Derives an independent master seed for sub-run `index` (sweep rows, set points).
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
