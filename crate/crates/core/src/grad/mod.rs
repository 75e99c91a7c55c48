//! Dense tensors, MLP layers with reverse-mode gradients, and Adam.

mod adam;
pub mod codec;
mod mlp;
mod tensor;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use mlp::{Activation, ForwardTrace, Layer, MlpGrads, MlpParams};
pub use tensor::DenseTensor;
