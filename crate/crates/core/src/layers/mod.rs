//! Forward and backward kernels for every layer kind the model zoo uses.
//! All kernels accept a single HxWxC example or an NxHxWxC batch.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod pool;

pub use activation::{clip01, clip01_backward, relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{
    conv2d, conv2d_backward, conv2d_forward, conv_output_extent, deconv2d, deconv2d_backward,
    deconv2d_forward, deconv_output_extent, ConvGrads, ConvParams, DeconvParams, Padding,
};
pub use dense::{dense, dense_backward, dense_forward, DenseGrads, DenseParams};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, Pooled};
