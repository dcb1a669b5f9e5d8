//! Seedable, splittable random streams.
//!
//! Every random consumer in the crate draws from a [`ChaCha8Rng`] whose seed is
//! the master seed and whose stream id is derived from a pair of indices
//! (for example node index and replication index). The output of a computation
//! therefore does not depend on the order in which substreams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream namespaces. Keeping them disjoint means that, say, the pilot runs at
/// node 3 never share randomness with the reference runs at node 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Reference = 1,
    Pilot = 2,
    Design = 3,
    InitialRuns = 4,
    Candidates = 5,
    Sequential = 6,
    Oracle = 7,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the independent substream for `(purpose, a, b)` under `master`.
pub fn substream(master: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(master ^ mix(purpose as u64)));
    rng.set_stream(mix(mix(a) ^ b.rotate_left(32)));
    rng
}

/// Derive a child master seed, used to give each repetition its own seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
