//! Seeded randomness.
//!
//! Reparameterization noise comes from a counter-based generator: every draw
//! is a pure function of `(seed, stream, step, example, dim)`, so a forward
//! trace can be replayed exactly without carrying generator state around.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream used for training-time noise.
pub const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
/// Stream used for the fixed evaluation batch.
pub const EVAL_STREAM: u64 = 0x6576_616c_0000_0000;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn mix(keys: &[u64]) -> u64 {
    keys.iter().fold(0x243F_6A88_85A3_08D3, |h, &k| splitmix64(h ^ k))
}

/// Uniform in the open interval (0, 1).
#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Counter-keyed standard normal draws (Box–Muller).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream: u64,
    pub step: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, stream: u64, step: u64) -> Self {
        Self { seed, stream, step }
    }

    pub fn normal(&self, example: u64, dim: u64) -> f64 {
        let h = mix(&[self.seed, self.stream, self.step, example, dim]);
        let u1 = unit_open(h);
        let u2 = unit_open(splitmix64(h));
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Noise for a batch whose rows are the dataset examples `examples`.
    pub fn matrix(&self, examples: &[usize], dims: usize) -> crate::Matrix {
        crate::Matrix::from_fn(examples.len(), dims, |i, j| self.normal(examples[i] as u64, j as u64))
    }
}

/// A seeded stream generator for initialization and shuffling.
pub fn seeded(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, purpose]))
}
