//! From-scratch toolkit for video violence detection with a flow gated
//! two-stream 3D CNN: dense tensors with reverse-mode differentiation, the
//! network layers and model variants, Farnebäck dense optical flow, the
//! motion-crop preprocessing pipeline, leakage-aware dataset splitting, and
//! a deterministic training/evaluation loop.

pub mod data;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod preprocess;
pub mod video;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{finite_diff_grad, Tape, Tensor, TensorId};
