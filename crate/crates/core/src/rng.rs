//! Seed derivation.
//!
//! Every consumer of randomness (weight init, shuffling, noise, synthetic
//! rendering, latent sampling) draws from its own ChaCha stream whose key is
//! derived from the run seed and a stream label with splitmix64. Adding a new
//! consumer therefore never perturbs the numbers seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// One round of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    /// Child seed for a named consumer.
    pub fn derive_seed(&self, label: &str) -> u64 {
        splitmix64(self.seed ^ splitmix64(label_hash(label)))
    }

    pub fn child(&self, label: &str) -> SeedStream {
        SeedStream::new(self.derive_seed(label))
    }

    /// Child seed for the `index`-th member of a family (e.g. epoch `i`).
    pub fn indexed(&self, label: &str, index: u64) -> SeedStream {
        SeedStream::new(splitmix64(self.derive_seed(label) ^ splitmix64(index)))
    }

    pub fn rng(&self, label: &str) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.derive_seed(label))
    }
}
