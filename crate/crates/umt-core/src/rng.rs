//! Deterministic randomness plumbing.
//!
//! Every stochastic component in the crate draws from a [`ChaCha8Rng`] seeded
//! through [`derive_seed`], so split seeds are decorrelated and artifacts are
//! reproducible bit-for-bit from a single root seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng64 = ChaCha8Rng;

/// Stream tags keep seeds for unrelated purposes disjoint even when the
/// (seed, index) pair collides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SceneRender = 1,
    DomainShift = 2,
    ParamInit = 3,
    TrainLoop = 4,
    Augment = 5,
    InverseNoise = 6,
}

/// SplitMix64 finalizer; a cheap, well-mixed hash for seed derivation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `(root, stream, index)`.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(root ^ splitmix64((stream as u64) << 32 ^ index))
}

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full generator state, snapshot into checkpoints so resumed runs replay
/// the exact same draw sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &Rng64) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng64 {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn derived_seeds_differ_across_streams_and_indices() {
        let a = derive_seed(7, Stream::SceneRender, 0);
        let b = derive_seed(7, Stream::SceneRender, 1);
        let c = derive_seed(7, Stream::DomainShift, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, Stream::SceneRender, 0));
    }

    #[test]
    fn snapshot_roundtrip_replays_sequence() {
        let mut rng = seeded(123);
        let _: f64 = rng.random();
        let snap = RngSnapshot::capture(&rng);
        let tail: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let mut restored = snap.restore();
        let replay: Vec<f64> = (0..16).map(|_| restored.random()).collect();
        assert_eq!(tail, replay);
    }
}
