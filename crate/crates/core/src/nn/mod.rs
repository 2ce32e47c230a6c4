//! Minimal reverse-mode building blocks: a 2-D tensor, layers with explicit
//! forward caches, losses and the Adam optimizer.

mod adam;
pub mod gradcheck;
pub mod loss;
pub mod ops;
mod tensor;

pub use adam::Adam;
pub use loss::{mse_loss, triplet_ratio_loss, Reduction, TripletLoss};
pub use ops::{Activation, DenseParams, TagConvParams};
pub use tensor::Tensor;
