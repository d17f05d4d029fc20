//! Counter-style RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(master seed, purpose, particle, step)`. Results therefore do not depend on
//! how particles are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tags separating the independent uses of randomness inside one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    InitialDraw = 1,
    InitVelocity = 2,
    InitNoise = 3,
    FlowVelocity = 4,
    Chain = 5,
    ExactSample = 6,
    Metric = 7,
    Observations = 8,
    Test = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the RNG for one `(purpose, particle, step)` cell of a run.
pub fn substream(seed: u64, purpose: Purpose, particle: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = splitmix64(splitmix64(splitmix64(purpose as u64) ^ particle) ^ step);
    rng.set_stream(key);
    rng
}

/// Descriptor attached to particle clouds recording where their randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub seed: u64,
    pub purpose: Purpose,
}
