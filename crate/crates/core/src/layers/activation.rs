//! Elementwise activations. The subgradient of ReLU at 0 is 0; the clip
//! passes gradient only strictly inside (0, 1).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn clip01(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

fn gated(x: &Tensor, dy: &Tensor, what: &str, pass: impl Fn(f64) -> bool) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "{what} gradient {} does not match input {}",
            dy.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if pass(v) { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(x.shape().clone(), data))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    gated(x, dy, "relu", |v| v > 0.0)
}

pub fn clip01_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    gated(x, dy, "clip01", |v| v > 0.0 && v < 1.0)
}

/// Takes the sigmoid *output* `y`, since σ' = y(1 − y).
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.mul(dy)?.mul(&y.map(|v| 1.0 - v))
}
