//! Mean squared error between predicted and true center patches.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(y: &Tensor, yhat: &Tensor) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::Shape(format!(
            "mse operands differ: {} vs {}",
            y.shape(),
            yhat.shape()
        )));
    }
    Ok(())
}

/// Mean of squared element differences. For an `(N, 192)` batch this is
/// the batch mean of per-example MSE, since every row has the same length.
pub fn mse(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check(y, yhat)?;
    let sq: f64 = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / y.len() as f64)
}

/// One MSE per leading-axis row.
pub fn per_example_mse(y: &Tensor, yhat: &Tensor) -> Result<Vec<f64>> {
    check(y, yhat)?;
    let n = if y.dims().len() == 1 { 1 } else { y.dims()[0] };
    let width = y.len() / n;
    Ok(y
        .data()
        .chunks_exact(width)
        .zip(yhat.data().chunks_exact(width))
        .map(|(a, b)| {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / width as f64
        })
        .collect())
}

/// ∂mse/∂yhat; the gradient with respect to `y` is its negation.
pub fn mse_grad(y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
    check(y, yhat)?;
    let scale = 2.0 / y.len() as f64;
    Ok(yhat.sub(y)?.scale(scale))
}
