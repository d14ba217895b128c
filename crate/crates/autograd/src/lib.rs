//! Tensor tape with differentiable backward passes.
//!
//! The engine is deliberately small: `f64` dense tensors, a handful of
//! elementwise ops, matrix products, 2-D convolutions and the reshaping
//! primitives needed by convolutional generators, critics and ConvLSTM cells.

pub mod check;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use kernels::ConvGeom;
pub use optim::{Adam, AdamConfig};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
