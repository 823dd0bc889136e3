//! Seed splitting.
//!
//! Every random quantity in a run derives from one master seed:
//!
//! ```text
//! master seed --splitmix64(master, i)--> replication seed s_i
//! s_i --ChaCha8(s_i, stream)--> env truth / agent / noise / init streams
//! ```
//!
//! Streams are independent ChaCha8 streams keyed by the replication seed, so
//! every agent in a replication sees the same environment instance and the
//! same noise sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Ground-truth environment draws.
    Env = 1,
    /// Agent sampling.
    Agent = 2,
    /// Observation noise.
    Noise = 3,
    /// Auxiliary draws used by verification suites.
    Verify = 4,
    /// Agent initialisation, such as network weights.
    Init = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer applied to `master + (index + 1) * golden`, keeping
/// the top 63 bits so seeds fit signed 64-bit integer fields in config files.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) >> 1
}
