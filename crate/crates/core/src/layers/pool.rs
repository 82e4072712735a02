//! 2x2 / stride-2 max pooling.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Pooled activations plus, for every output element, the flat index of
/// the input element that won its window.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn maxpool2x2_forward(x: &Tensor) -> Result<Pooled> {
    let (n, h, w, c) = match *x.dims() {
        [h, w, c] => (1, h, w, c),
        [n, h, w, c] => (n, h, w, c),
        _ => {
            return Err(Error::Shape(format!(
                "max pooling expects HxWxC or NxHxWxC, got {}",
                x.shape()
            )))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "2x2 max pooling needs even extents, got {}",
            x.shape()
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        let base = b * h * w * c;
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    // row-major window order; strict `>` keeps the first maximum
                    let mut best = base + ((2 * i) * w + 2 * j) * c + ch;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + ((2 * i + di) * w + 2 * j + dj) * c + ch;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let mut dims = x.dims().to_vec();
    let r = dims.len();
    dims[r - 3] = oh;
    dims[r - 2] = ow;
    let shape = Shape::new(&dims)?;
    Ok(Pooled {
        output: Tensor::from_parts(shape, out),
        argmax,
    })
}

/// Routes each upstream gradient to its window's recorded argmax.
pub fn maxpool2x2_backward(dy: &Tensor, argmax: &[usize], input_shape: &Shape) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "pool gradient {} does not match {} recorded windows",
            dy.shape(),
            argmax.len()
        )));
    }
    let mut dx = vec![0.0; input_shape.numel()];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx] += g;
    }
    Ok(Tensor::from_parts(input_shape.clone(), dx))
}
