//! Interactive correction-based policy training: dueling Q-networks refined
//! from human or simulated action corrections and unlabeled rollouts.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision types used by the trainer and CLI.

pub mod buffers;
pub mod envs;
mod error;
pub mod grad;
pub mod labelers;
pub mod losses;
pub mod qfunction;
mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{gemm, Op, Scalar};

pub type Tensor = grad::DenseTensor<f64>;
pub type Mlp = grad::MlpParams<f64>;
pub type Adam = grad::AdamState<f64>;
pub type QNet = qfunction::DuelingQ<f64>;
pub type TargetNet = qfunction::TargetQ<f64>;
