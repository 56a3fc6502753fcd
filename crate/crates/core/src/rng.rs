//! Counter-based random streams keyed by `(seed, path, purpose)`.
//!
//! Every Monte Carlo path owns independent streams for each source of
//! randomness, so results do not depend on how paths are scheduled across
//! worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Each purpose gets its own key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Schedule,
    InitialState,
    ProcessNoise,
    ObservationNoise,
    Bootstrap,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Schedule => 0x5343_4845_4455_4c45,
            Purpose::InitialState => 0x494e_4954_5354_4154,
            Purpose::ProcessNoise => 0x5052_4f43_4e4f_4953,
            Purpose::ObservationNoise => 0x4f42_534e_4f49_5345,
            Purpose::Bootstrap => 0x424f_4f54_5354_5250,
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies one Monte Carlo path: a base seed and a path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathSeed {
    pub seed: u64,
    pub path: u64,
}

impl PathSeed {
    pub fn new(seed: u64, path: u64) -> Self {
        PathSeed { seed, path }
    }

    pub fn stream(&self, purpose: Purpose) -> StreamRng {
        stream(self.seed, self.path, purpose)
    }
}

/// Derive the stream for `(seed, path_index, purpose)`.
pub fn stream(seed: u64, path_index: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(purpose.tag())));
    rng.set_stream(path_index);
    rng
}
