//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes an explicit generator. Independent
//! streams are derived from a root seed plus a key path (e.g. `[epoch,
//! sample]`), so work can be reordered or parallelised without changing the
//! numbers each unit of work sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A root seed from which keyed child generators are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child stream whose seed mixes in `key`.
    pub fn split(&self, key: u64) -> SeedStream {
        SeedStream {
            seed: mix(self.seed ^ mix(key.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    /// A child stream for a key path.
    pub fn split_path(&self, keys: &[u64]) -> SeedStream {
        keys.iter().fold(*self, |s, &k| s.split(k))
    }

    /// A ChaCha generator at the start of this stream.
    pub fn rng(&self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn rng_for(&self, keys: &[u64]) -> Rng {
        self.split_path(keys).rng()
    }
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
