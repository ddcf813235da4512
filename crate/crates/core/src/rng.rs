//! Named random streams derived from one root seed.
//!
//! Initialization, data shuffling and dropout each draw from their own
//! stream so that changing one consumer (say, the alignment weight) never
//! perturbs another's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Dropout,
    Split,
    Synthetic,
    Probe,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1a2b_3c4d_0000_0001,
            Stream::Shuffle => 0x1a2b_3c4d_0000_0002,
            Stream::Dropout => 0x1a2b_3c4d_0000_0003,
            Stream::Split => 0x1a2b_3c4d_0000_0004,
            Stream::Synthetic => 0x1a2b_3c4d_0000_0005,
            Stream::Probe => 0x1a2b_3c4d_0000_0006,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(root: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(root) ^ stream.tag())
}

pub fn stream(root: u64, stream: Stream) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, stream))
}
