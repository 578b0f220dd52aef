//! Seeded, splittable random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by the run
//! seed and positioned on a stream id derived from a domain tag plus a list of
//! indices (site id, frame index, block index, ...). Two calls with the same
//! `(seed, tag, indices)` always yield the same sequence, independent of the
//! order in which streams are created or which thread consumes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for `tag` at the given index path.
    pub fn stream(&self, tag: &str, indices: &[u64]) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(tag, indices));
        rng
    }

    /// Child tree whose seed is derived from this one; used to hand a
    /// sub-simulation its own seed space.
    pub fn child(&self, tag: &str, indices: &[u64]) -> SeedTree {
        SeedTree {
            seed: splitmix64(self.seed ^ stream_id(tag, indices)),
        }
    }
}

fn stream_id(tag: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the tag, then mix in each index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
