//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass in execution
//! order, which is already a topological order of the graph. `backward`
//! sweeps it once in reverse, summing contributions for values that feed
//! several consumers. Tapes are single-use: build a fresh one per step.

pub mod check;

use crate::error::{Error, Result};
use crate::layers::{self, Padding};
use crate::loss;
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Clip01(Var),
    Conv {
        x: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
        stride: usize,
    },
    Deconv {
        x: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Gradients from one backward sweep, keyed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.spent {
            return Err(Error::State("tape already consumed by backward()".into()));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf_impl(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_impl(value, true)
    }

    /// An input that never receives a gradient, e.g. training images.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf_impl(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &Shape) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(v, Op::Reshape(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = layers::relu(self.value(a));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = layers::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn clip01(&mut self, a: Var) -> Result<Var> {
        let v = layers::clip01(self.value(a));
        self.push(v, Op::Clip01(a), &[a])
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: Padding, stride: usize) -> Result<Var> {
        let v = layers::conv2d(self.value(x), self.value(kernel), self.value(bias), padding, stride)?;
        let op = Op::Conv { x, kernel, bias, padding, stride };
        self.push(v, op, &[x, kernel, bias])
    }

    pub fn deconv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: Padding, stride: usize) -> Result<Var> {
        let v = layers::deconv2d(self.value(x), self.value(kernel), self.value(bias), padding, stride)?;
        let op = Op::Deconv { x, kernel, bias, padding, stride };
        self.push(v, op, &[x, kernel, bias])
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let pooled = layers::maxpool2x2_forward(self.value(x))?;
        self.push(pooled.output, Op::MaxPool { x, argmax: pooled.argmax }, &[x])
    }

    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let v = layers::dense(self.value(x), self.value(weight), self.value(bias))?;
        self.push(v, Op::Dense { x, weight, bias }, &[x, weight, bias])
    }

    /// Scalar MSE between `pred` and `target` (batch mean for batched inputs).
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let v = loss::mse(self.value(target), self.value(pred))?;
        self.push(Tensor::scalar(v), Op::Mse { pred, target }, &[pred, target])
    }

    /// Reverse sweep from a one-element `loss`. Every leaf created with
    /// [`Tape::leaf`] gets an entry, zero if the loss does not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::State("backward() called twice on the same tape".into()));
        }
        let seed_shape = self.value(loss).shape().clone();
        if seed_shape.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {seed_shape}"
            )));
        }
        self.spent = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(&seed_shape));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(&node.op, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }

        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if matches!(node.op, Op::Leaf) && node.needs_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor| -> Result<()> {
            if !self.wants(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(a, g.clone())?;
                send(b, g.clone())?;
            }
            Op::Sub(a, b) => {
                send(a, g.clone())?;
                send(b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                send(a, g.mul(self.value(b))?)?;
                send(b, g.mul(self.value(a))?)?;
            }
            Op::Scale(a, factor) => send(a, g.scale(factor))?,
            Op::Sum(a) => send(a, Tensor::full(self.value(a).shape(), g.data()[0]))?,
            Op::Reshape(a) => send(a, g.reshape(self.value(a).shape())?)?,
            Op::Relu(a) => send(a, layers::relu_backward(self.value(a), g)?)?,
            Op::Clip01(a) => send(a, layers::clip01_backward(self.value(a), g)?)?,
            Op::Sigmoid(a) => {
                let y = layers::sigmoid(self.value(a));
                send(a, layers::sigmoid_backward(&y, g)?)?;
            }
            Op::Conv { x, kernel, bias, padding, stride } => {
                let gr = layers::conv::conv2d_backward_impl(
                    self.value(x),
                    self.value(kernel),
                    padding,
                    stride,
                    g,
                    self.wants(x),
                )?;
                send(x, gr.input)?;
                send(kernel, gr.kernel)?;
                send(bias, gr.bias)?;
            }
            Op::Deconv { x, kernel, bias, padding, stride } => {
                let gr = layers::deconv2d_backward(self.value(x), self.value(kernel), padding, stride, g)?;
                send(x, gr.input)?;
                send(kernel, gr.kernel)?;
                send(bias, gr.bias)?;
            }
            Op::MaxPool { x, ref argmax } => {
                send(x, layers::maxpool2x2_backward(g, argmax, self.value(x).shape())?)?;
            }
            Op::Dense { x, weight, bias } => {
                let gr = layers::dense_backward(self.value(x), self.value(weight), g)?;
                send(x, gr.input)?;
                send(weight, gr.weight)?;
                send(bias, gr.bias)?;
            }
            Op::Mse { pred, target } => {
                let d = loss::mse_grad(self.value(target), self.value(pred))?.scale(g.data()[0]);
                send(target, d.scale(-1.0))?;
                send(pred, d)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(xs: &[f64]) -> Tensor {
        Tensor::from_vec(&Shape::new(&[xs.len()]).unwrap(), xs.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0, -2.0, 3.0]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(l).unwrap().data(), &[1.0]);
    }

    #[test]
    fn mse_of_self_has_zero_grads() {
        let mut tape = Tape::new();
        let y = tape.leaf(vec_t(&[0.2, 0.9, 0.4]));
        let l = tape.mse(y, y).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        let g = tape.backward(l).unwrap();
        assert!(g.get(y).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn untouched_parameter_gets_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        let unused = tape.leaf(vec_t(&[5.0, 6.0, 7.0]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(vec_t(&[1.0, 2.0]));
        let w = tape.leaf(vec_t(&[3.0, 4.0]));
        let p = tape.mul(c, w).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_is_state_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[1.0]));
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::State(_))));
        assert!(matches!(tape.relu(x), Err(Error::State(_))));
    }

    #[test]
    fn quadratic_gradient() {
        // 0.5·‖x‖² → x
        let mut tape = Tape::new();
        let x = tape.leaf(vec_t(&[0.5, -1.5, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let l = tape.scale(s, 0.5).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5, -1.5, 2.0]);
    }
}
