//! Dense row-major tensors of `f64`.
//!
//! Activations use height × width × channels layout, with an optional
//! leading batch extent, so a flatten walks rows, then columns, then
//! channels. There is no broadcasting: every binary op requires equal
//! shapes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Ordered list of 1 to 4 positive extents.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::shape(format!(
                "rank must be between 1 and {MAX_RANK}, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::shape(format!("zero extent in {dims:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Prepends a batch extent.
    pub fn batched(&self, n: usize) -> Result<Shape> {
        let mut dims = Vec::with_capacity(self.rank() + 1);
        dims.push(n);
        dims.extend_from_slice(&self.0);
        Shape::new(&dims)
    }

    /// Drops the leading extent, e.g. the batch dimension.
    pub fn tail(&self) -> Option<Shape> {
        (self.rank() > 1).then(|| Shape(self.0[1..].to_vec()))
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(&dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shape({self})")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor({}, [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ... {} more", self.data.len() - SHOWN)?;
        }
        f.write_str("])")
    }
}

impl Tensor {
    pub fn zeros(shape: &Shape) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &Shape) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &Shape, value: f64) -> Tensor {
        Tensor {
            shape: shape.clone(),
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Result<Tensor> {
        let shape = Shape::new(&[n, n])?;
        let mut t = Tensor::zeros(&shape);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: &Shape, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values cannot fill shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor {
            shape: shape.clone(),
            data,
        })
    }

    /// Internal constructor for kernels whose output length is known correct.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn flat_index(&self, index: &[usize]) -> Result<usize> {
        let dims = self.dims();
        if index.len() != dims.len() {
            return Err(Error::Range(format!(
                "index {index:?} has wrong rank for shape {}",
                self.shape
            )));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(dims) {
            if i >= d {
                return Err(Error::Range(format!(
                    "index {index:?} out of bounds for shape {}",
                    self.shape
                )));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let i = self.flat_index(index)?;
        self.data[i] = value;
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.check_same_shape(b)?;
        let data: Vec<f64> = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        let out = Tensor::from_parts(a.shape.clone(), data);
        if !out.is_finite() {
            return Err(Error::Numeric(format!("{op:?} produced a non-finite value")));
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinaryOp::Mul, self, other)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Matrix product of `(m, k)` and `(k, n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.dims(), other.dims()) else {
            return Err(Error::shape(format!(
                "matmul needs two matrices, got {} and {}",
                self.shape, other.shape
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        let out = Tensor::from_parts(Shape(vec![m, n]), out);
        if !out.is_finite() {
            return Err(Error::Numeric("matmul produced a non-finite value".into()));
        }
        Ok(out)
    }

    pub fn reshape(&self, shape: &Shape) -> Result<Tensor> {
        if shape.numel() != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} ({} elements) into {shape} ({} elements)",
                self.shape,
                self.len(),
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape: shape.clone(),
            data: self.data.clone(),
        })
    }

    /// Same as [`Tensor::reshape`] but consumes `self` and reuses the buffer.
    pub fn into_shape(self, shape: &Shape) -> Result<Tensor> {
        if shape.numel() != self.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.clone(),
            data: self.data,
        })
    }

    fn check_region(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let &[rows, cols, channels] = self.dims() else {
            return Err(Error::shape(format!(
                "region access needs an HxWxC tensor, got {}",
                self.shape
            )));
        };
        if h == 0 || w == 0 || row0 + h > rows || col0 + w > cols {
            return Err(Error::Range(format!(
                "region rows {row0}..{} cols {col0}..{} outside {}",
                row0 + h,
                col0 + w,
                self.shape
            )));
        }
        Ok((rows, cols, channels))
    }

    /// Copies the `h × w` window at `(row0, col0)` of an HxWxC tensor.
    pub fn slice_region(&self, row0: usize, col0: usize, h: usize, w: usize) -> Result<Tensor> {
        let (_, cols, channels) = self.check_region(row0, col0, h, w)?;
        let mut data = Vec::with_capacity(h * w * channels);
        for r in row0..row0 + h {
            let start = (r * cols + col0) * channels;
            data.extend_from_slice(&self.data[start..start + w * channels]);
        }
        Ok(Tensor::from_parts(Shape(vec![h, w, channels]), data))
    }

    /// Overwrites the window at `(row0, col0)` with `patch` (an hxwxC tensor).
    pub fn write_region(&mut self, row0: usize, col0: usize, patch: &Tensor) -> Result<()> {
        let &[h, w, pc] = patch.dims() else {
            return Err(Error::shape(format!("patch must be HxWxC, got {}", patch.shape)));
        };
        let (_, cols, channels) = self.check_region(row0, col0, h, w)?;
        if pc != channels {
            return Err(Error::shape(format!(
                "patch {} has {pc} channels, target {} has {channels}",
                patch.shape, self.shape
            )));
        }
        for r in 0..h {
            let dst = ((row0 + r) * cols + col0) * channels;
            let src = r * w * channels;
            self.data[dst..dst + w * channels].copy_from_slice(&patch.data[src..src + w * channels]);
        }
        Ok(())
    }

    /// Row `i` of the leading axis, as a tensor of the remaining shape.
    pub fn index_outer(&self, i: usize) -> Result<Tensor> {
        let inner = self
            .shape
            .tail()
            .ok_or_else(|| Error::shape(format!("cannot index into rank-1 {}", self.shape)))?;
        if i >= self.dims()[0] {
            return Err(Error::Range(format!("outer index {i} out of {}", self.shape)));
        }
        let n = inner.numel();
        Ok(Tensor::from_parts(inner, self.data[i * n..(i + 1) * n].to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let shape = first.shape.batched(items.len())?;
        let mut data = Vec::with_capacity(shape.numel());
        for t in items {
            first.check_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_parts(shape, data))
    }
}

/// `c = a · b + beta · c` where `a` is logically `(m, k)` and `b` is `(k, n)`.
/// The `*_t` flags say the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided ranges checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
