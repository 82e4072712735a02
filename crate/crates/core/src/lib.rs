//! A small CPU deep-learning stack for filling in the masked 8x8 center of
//! 32x32 RGB images: tensors, tape autograd, layers, Adam, the CIFAR-10
//! pipeline, a model zoo, a trainer and the `inpaint` command line.

pub mod autograd;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
