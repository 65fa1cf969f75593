//! Seed derivation. A master seed fans out into independent streams keyed by
//! kernel class, iteration and column, so per-column updates draw the same
//! numbers whether they run sequentially or on a thread pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Scan,
    Loadings,
    Precisions,
    FactorRows,
    LatentCells,
    Cutpoints,
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence(u64);

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSequence {
    pub fn new(seed: u64) -> Self {
        SeedSequence(splitmix(seed))
    }

    /// Independent sub-sequence, e.g. one per candidate K or replicate.
    pub fn child(self, tag: u64) -> Self {
        SeedSequence(splitmix(self.0 ^ splitmix(tag.wrapping_add(0x5851_f42d))))
    }

    pub fn rng(self, stream: Stream) -> ChainRng {
        self.derive(stream, 0, 0)
    }

    pub fn derive(self, stream: Stream, a: u64, b: u64) -> ChainRng {
        let mut h = splitmix(self.0 ^ (stream as u64));
        h = splitmix(h ^ a);
        h = splitmix(h ^ b.rotate_left(32));
        ChaCha8Rng::seed_from_u64(h)
    }
}
