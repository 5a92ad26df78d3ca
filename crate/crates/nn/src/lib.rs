//! Compact numerical engine with reverse-mode differentiation.
//!
//! Provides exactly the pieces the dual-tower classifier needs: dense
//! tensors, a gradient tape, 2-D/1-D convolution, affine and normalization
//! layers, PReLU and tanh activations, graph convolution, SortPooling,
//! BCE-with-logits, Adam with decoupled weight decay, a reduce-on-plateau
//! schedule, finite-difference gradient checking and a checkpoint format.
//!
//! Training runs in `f32`; gradient verification instantiates the same code
//! in `f64`.

pub mod checkpoint;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use error::NnError;
pub use tape::{Tape, Value};
pub use tensor::{Real, Tensor};
