//! Tensor algebra, tape-based reverse-mode differentiation, Glorot
//! initialization and the Adam optimizer.
//!
//! Everything is generic over [`Scalar`] so training can run in `f32` while
//! gradient checks run in `f64`. Tensors are stored row-major; images use
//! `H×W×C` layout and convolution kernels use `3×3×C_in×C_out`.

mod adam;
mod init;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{glorot_bound, glorot_init};
pub use ops::{bce_loss, conv2d, conv_output_extent, dense, elu, mse_loss, sigmoid, BCE_EPSILON};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// Convolution kernels are always 3×3.
pub const KERNEL_SIZE: usize = 3;
