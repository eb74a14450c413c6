//! Named random streams derived from a single master seed.
//!
//! Every stochastic decision in a run draws from its own stream so that,
//! for example, changing the protocol does not perturb the crash trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Partition = 2,
    Population = 3,
    Crash = 4,
    Shuffle = 5,
    Selection = 6,
    Estimator = 7,
    MonteCarlo = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an index path into a new seed.
pub fn derive_seed(master: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(stream as u64));
    for &p in path {
        h = splitmix64(h ^ p.wrapping_mul(0xd1b5_4a32_d192_ed03));
    }
    h
}

pub fn stream_rng(master: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, path))
}
