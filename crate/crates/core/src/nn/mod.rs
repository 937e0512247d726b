//! Small neural-network substrate shared by the recurrent learners and the
//! dense baseline: matrices, activations, loss, optimisers, gradient checks.
//!
//! Everything is `f64` and single-threaded so that a fixed seed reproduces a
//! training run bit for bit.

mod activation;
mod gradcheck;
mod loss;
mod matrix;
mod mlp;
mod optim;

pub use activation::{sigmoid, sigmoid_derivative, sigmoid_matrix, tanh_derivative, tanh_matrix};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::mse_loss;
pub use matrix::{axpy, dot, Matrix};
pub use mlp::{mlp_train, MlpConfig, MlpGrads, MlpModel};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Seeded PRNG used for every source of randomness in the crate.
pub type Rng64 = Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng64 {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform sample in `[-1/√fan_in, +1/√fan_in]`.
pub fn scaled_uniform(rng: &mut Rng64, fan_in: usize) -> f64 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.random_range(-bound..=bound)
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

/// A model whose trainable state can be viewed as an ordered list of flat
/// slices. Gradients use the same type so both sides line up slice by slice.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(NnError::Length {
                left: flat.len(),
                right: n,
            });
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let len = s.len();
            s.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Hash of the exact bit patterns of every parameter.
    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in self.param_slices() {
            for x in s {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}
