//! Fully connected layer: `y = x·W + b`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

#[derive(Clone, Debug)]
pub struct DenseParams {
    /// `(in, out)`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    dense(x, &p.weight, &p.bias)
}

fn dims(x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, fan_in) = match *x.dims() {
        [f] => (1, f),
        [n, f] => (n, f),
        _ => return Err(Error::Shape(format!("dense expects (in) or (N, in), got {}", x.shape()))),
    };
    match *weight.dims() {
        [i, o] if i == fan_in => Ok((n, fan_in, o)),
        _ => Err(Error::Shape(format!(
            "dense weight {} does not accept input {}",
            weight.shape(),
            x.shape()
        ))),
    }
}

/// Accepts `(in)` or `(N, in)`; the output keeps the input's rank.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fan_in, fan_out) = dims(x, weight)?;
    if bias.dims() != [fan_out] {
        return Err(Error::Shape(format!(
            "dense bias must have shape {fan_out}, got {}",
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * fan_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, fan_in, fan_out, x.data(), false, weight.data(), false, &mut out, 1.0);
    let shape = if x.dims().len() == 1 {
        Shape::new(&[fan_out])?
    } else {
        Shape::new(&[n, fan_out])?
    };
    Ok(Tensor::from_parts(shape, out))
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<DenseGrads> {
    let (n, fan_in, fan_out) = dims(x, weight)?;
    if dy.len() != n * fan_out {
        return Err(Error::Shape(format!(
            "dense upstream gradient {} does not match output ({n}, {fan_out})",
            dy.shape()
        )));
    }
    let mut dx = vec![0.0; n * fan_in];
    gemm(n, fan_out, fan_in, dy.data(), false, weight.data(), true, &mut dx, 0.0);
    let mut dw = vec![0.0; fan_in * fan_out];
    gemm(fan_in, n, fan_out, x.data(), true, dy.data(), false, &mut dw, 0.0);
    let mut db = vec![0.0; fan_out];
    for row in dy.data().chunks_exact(fan_out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_parts(x.shape().clone(), dx),
        weight: Tensor::from_parts(weight.shape().clone(), dw),
        bias: Tensor::from_parts(Shape::new(&[fan_out])?, db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_returns_bias() {
        let x = Tensor::full(&Shape::new(&[5]).unwrap(), 3.0);
        let w = Tensor::zeros(&Shape::new(&[5, 3]).unwrap());
        let b = Tensor::from_vec(&Shape::new(&[3]).unwrap(), vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap(), b);
    }

    #[test]
    fn model_fc_widths() {
        let x = Tensor::zeros(&Shape::new(&[2, 5760]).unwrap());
        let w = Tensor::zeros(&Shape::new(&[5760, 768]).unwrap());
        let b = Tensor::zeros(&Shape::new(&[768]).unwrap());
        assert_eq!(dense(&x, &w, &b).unwrap().dims(), &[2, 768]);
        let bad = Tensor::zeros(&Shape::new(&[5761]).unwrap());
        assert!(dense(&bad, &w, &b).is_err());
    }

    #[test]
    fn matches_row_matmul() {
        let s = |d: &[usize]| Shape::new(d).unwrap();
        let x = Tensor::from_vec(&s(&[4]), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let w = Tensor::from_vec(&s(&[4, 3]), (0..12).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        let b = Tensor::zeros(&s(&[3]));
        let row = x.reshape(&s(&[1, 4])).unwrap().matmul(&w).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), row.data());
    }
}
