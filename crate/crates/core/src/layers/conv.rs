//! Valid/same 2-D convolution and its transpose.
//!
//! Both are lowered to im2col + GEMM. A transposed convolution is computed
//! as the adjoint of the convolution that maps its (larger) output back to
//! its input, so the same [`Window`] geometry drives both directions.
//!
//! Kernels: convolution `(k, k, C_in, C_out)`, transposed convolution
//! `(k, k, C_out, C_in)`. With these layouts `deconv2d` with kernel `K` is
//! exactly the adjoint of `conv2d` with the same `K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

/// Upper bound on im2col buffer elements per chunk (8 MiB of f64).
const CHUNK_ELEMS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        })
    }
}

/// Spatial output extent of a convolution.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::shape(format!("kernel {k} and stride {stride} must be positive")));
    }
    match padding {
        Padding::Valid if input < k => Err(Error::shape(format!(
            "{k}x{k} valid convolution does not fit a {input}-wide input"
        ))),
        Padding::Valid => Ok((input - k) / stride + 1),
        Padding::Same if stride != 1 => Err(Error::shape(format!(
            "same convolution requires stride 1, got {stride}"
        ))),
        Padding::Same => Ok(input),
    }
}

/// Spatial output extent of a transposed convolution.
pub fn deconv_output_extent(input: usize, k: usize, stride: usize, padding: Padding) -> Result<usize> {
    if k == 0 || stride == 0 || input == 0 {
        return Err(Error::shape(format!(
            "kernel {k}, stride {stride} and input {input} must be positive"
        )));
    }
    Ok(match padding {
        Padding::Valid => (input - 1) * stride + k,
        Padding::Same => input * stride,
    })
}

/// Geometry of a strided window sweep over the larger ("big") map producing
/// the smaller map: big position = small · stride + offset − pad. Positions
/// outside the big map read as zero.
#[derive(Clone, Copy, Debug)]
struct Window {
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    k: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Window {
    fn for_conv(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Window> {
        let small_h = conv_output_extent(h, k, stride, padding)?;
        let small_w = conv_output_extent(w, k, stride, padding)?;
        let pad = match padding {
            Padding::Valid => 0,
            // extra pixel goes bottom/right for even k
            Padding::Same => (k - 1) / 2,
        };
        Ok(Window {
            big_h: h,
            big_w: w,
            small_h,
            small_w,
            k,
            stride,
            pad_top: pad,
            pad_left: pad,
        })
    }

    fn for_deconv(h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Window> {
        let big_h = deconv_output_extent(h, k, stride, padding)?;
        let big_w = deconv_output_extent(w, k, stride, padding)?;
        let pad = match padding {
            Padding::Valid => 0,
            // full output is (in-1)·s+k; crop the excess, larger half bottom/right
            Padding::Same => k.saturating_sub(stride) / 2,
        };
        Ok(Window {
            big_h,
            big_w,
            small_h: h,
            small_w: w,
            k,
            stride,
            pad_top: pad,
            pad_left: pad,
        })
    }

    fn rows(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Big-map row for `(small_row, kernel_row)`, if inside the map.
    #[inline]
    fn big_row(&self, i: usize, di: usize) -> Option<usize> {
        (i * self.stride + di).checked_sub(self.pad_top).filter(|&r| r < self.big_h)
    }

    #[inline]
    fn big_col(&self, j: usize, dj: usize) -> Option<usize> {
        (j * self.stride + dj).checked_sub(self.pad_left).filter(|&c| c < self.big_w)
    }

    /// Unfolds one example of the big map (`big_h × big_w × c`) into
    /// `rows() × (k·k·c)` patches, columns ordered (kernel row, kernel col, channel).
    fn im2col(&self, big: &[f64], c: usize, cols: &mut [f64]) {
        let k = self.k;
        let seg = k * c;
        let width = k * seg;
        for i in 0..self.small_h {
            for j in 0..self.small_w {
                let row = &mut cols[(i * self.small_w + j) * width..][..width];
                for di in 0..k {
                    let dst = &mut row[di * seg..(di + 1) * seg];
                    let Some(r) = self.big_row(i, di) else {
                        dst.fill(0.0);
                        continue;
                    };
                    let first = (j * self.stride).checked_sub(self.pad_left);
                    match first {
                        Some(c0) if c0 + k <= self.big_w => {
                            let src = (r * self.big_w + c0) * c;
                            dst.copy_from_slice(&big[src..src + seg]);
                        }
                        _ => {
                            for dj in 0..k {
                                let d = &mut dst[dj * c..(dj + 1) * c];
                                match self.big_col(j, dj) {
                                    Some(col) => {
                                        let src = (r * self.big_w + col) * c;
                                        d.copy_from_slice(&big[src..src + c]);
                                    }
                                    None => d.fill(0.0),
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatters patch columns back, accumulating.
    fn col2im(&self, cols: &[f64], c: usize, big: &mut [f64]) {
        let k = self.k;
        let seg = k * c;
        let width = k * seg;
        for i in 0..self.small_h {
            for j in 0..self.small_w {
                let row = &cols[(i * self.small_w + j) * width..][..width];
                for di in 0..k {
                    let Some(r) = self.big_row(i, di) else { continue };
                    for dj in 0..k {
                        let Some(col) = self.big_col(j, dj) else { continue };
                        let src = &row[di * seg + dj * c..][..c];
                        let dst = &mut big[(r * self.big_w + col) * c..][..c];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// Examples per im2col chunk; depends only on geometry, so results do
    /// not depend on batch composition or thread count.
    fn chunk(&self, c: usize) -> usize {
        let per_example = self.rows() * self.k * self.k * c;
        (CHUNK_ELEMS / per_example.max(1)).max(1)
    }
}

/// `(N, H, W, C)` view of a rank-3 or rank-4 activation.
fn batch_dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize, bool)> {
    match *x.dims() {
        [h, w, c] => Ok((1, h, w, c, false)),
        [n, h, w, c] => Ok((n, h, w, c, true)),
        _ => Err(Error::shape(format!(
            "{what} expects HxWxC or NxHxWxC input, got {}",
            x.shape()
        ))),
    }
}

fn out_shape(batched: bool, n: usize, h: usize, w: usize, c: usize) -> Shape {
    let dims: &[usize] = if batched { &[n, h, w, c] } else { &[h, w, c] };
    Shape::new(dims).expect("positive extents")
}

/// Validates a square `(k, k, a, b)` kernel and returns `(k, a, b)`.
fn kernel_dims(kernel: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *kernel.dims() {
        [k, k2, a, b] if k == k2 => Ok((k, a, b)),
        _ => Err(Error::shape(format!(
            "{what} kernel must be (k, k, C, C'), got {}",
            kernel.shape()
        ))),
    }
}

fn check_bias(bias: &Tensor, channels: usize, what: &str) -> Result<()> {
    if bias.dims() != [channels] {
        return Err(Error::shape(format!(
            "{what} bias must have shape {channels}, got {}",
            bias.shape()
        )));
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    for px in out.chunks_exact_mut(bias.len()) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad(dy: &Tensor, channels: usize) -> Tensor {
    let mut db = vec![0.0; channels];
    for px in dy.data().chunks_exact(channels) {
        for (d, g) in db.iter_mut().zip(px) {
            *d += g;
        }
    }
    Tensor::from_parts(Shape::new(&[channels]).expect("positive"), db)
}

fn check_grad_shape(dy: &Tensor, expected: &Shape, what: &str) -> Result<()> {
    if dy.shape() != expected {
        return Err(Error::shape(format!(
            "{what} upstream gradient has shape {}, expected {expected}",
            dy.shape()
        )));
    }
    Ok(())
}

/// Gradients of a convolution-like layer.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    /// `(k, k, C_in, C_out)`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct DeconvParams {
    /// `(k, k, C_out, C_in)`
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
    pub stride: usize,
}

pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    conv2d(x, &p.kernel, &p.bias, p.padding, p.stride)
}

pub fn deconv2d_forward(x: &Tensor, p: &DeconvParams) -> Result<Tensor> {
    deconv2d(x, &p.kernel, &p.bias, p.padding, p.stride)
}

/// Cross-correlation plus bias over an HxWxC or NxHxWxC input.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding, stride: usize) -> Result<Tensor> {
    let (n, h, w, cin) = conv_input(x, kernel, bias, "conv2d")?;
    let (k, _, cout) = kernel_dims(kernel, "conv2d")?;
    let win = Window::for_conv(h, w, k, stride, padding)?;
    let batched = x.dims().len() == 4;
    let kkc = k * k * cin;
    let rows = win.rows();
    let in_stride = h * w * cin;

    let mut out = vec![0.0; n * rows * cout];
    let chunk = win.chunk(cin);
    let mut cols = vec![0.0; chunk.min(n) * rows * kkc];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        for e in 0..m {
            let src = &x.data()[(start + e) * in_stride..][..in_stride];
            win.im2col(src, cin, &mut cols[e * rows * kkc..][..rows * kkc]);
        }
        let dst = &mut out[start * rows * cout..][..m * rows * cout];
        gemm(m * rows, kkc, cout, &cols, false, kernel.data(), false, dst, 0.0);
    }
    add_bias(&mut out, bias.data());
    Ok(Tensor::from_parts(out_shape(batched, n, win.small_h, win.small_w, cout), out))
}

fn conv_input(x: &Tensor, kernel: &Tensor, bias: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    let (n, h, w, c, _) = batch_dims(x, what)?;
    let (_, kin, kout) = kernel_dims(kernel, what)?;
    if kin != c {
        return Err(Error::shape(format!(
            "{what} kernel {} expects {kin} input channels, input {} has {c}",
            kernel.shape(),
            x.shape()
        )));
    }
    check_bias(bias, kout, what)?;
    Ok((n, h, w, c))
}

pub fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    stride: usize,
    dy: &Tensor,
) -> Result<ConvGrads> {
    conv2d_backward_impl(x, kernel, padding, stride, dy, true)
}

/// With `want_input == false` the returned input gradient is all zeros and
/// the col2im scatter is skipped (first layer of a network).
pub(crate) fn conv2d_backward_impl(
    x: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    stride: usize,
    dy: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let (n, h, w, cin, batched) = batch_dims(x, "conv2d")?;
    let (k, kin, cout) = kernel_dims(kernel, "conv2d")?;
    if kin != cin {
        return Err(Error::shape(format!("conv2d kernel {} does not match input {}", kernel.shape(), x.shape())));
    }
    let win = Window::for_conv(h, w, k, stride, padding)?;
    check_grad_shape(dy, &out_shape(batched, n, win.small_h, win.small_w, cout), "conv2d")?;
    let kkc = k * k * cin;
    let rows = win.rows();
    let in_stride = h * w * cin;

    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    let chunk = win.chunk(cin);
    let mut cols = vec![0.0; chunk.min(n) * rows * kkc];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let dy_chunk = &dy.data()[start * rows * cout..][..m * rows * cout];
        for e in 0..m {
            let src = &x.data()[(start + e) * in_stride..][..in_stride];
            win.im2col(src, cin, &mut cols[e * rows * kkc..][..rows * kkc]);
        }
        gemm(kkc, m * rows, cout, &cols, true, dy_chunk, false, &mut dk, 1.0);
        if !want_input {
            continue;
        }
        // reuse the column buffer for the patch gradients
        gemm(m * rows, cout, kkc, dy_chunk, false, kernel.data(), true, &mut cols, 0.0);
        for e in 0..m {
            let dst = &mut dx[(start + e) * in_stride..][..in_stride];
            win.col2im(&cols[e * rows * kkc..][..rows * kkc], cin, dst);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(x.shape().clone(), dx),
        kernel: Tensor::from_parts(kernel.shape().clone(), dk),
        bias: bias_grad(dy, cout),
    })
}

/// Transposed convolution plus bias.
pub fn deconv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding, stride: usize) -> Result<Tensor> {
    let (n, h, w, cin, batched) = batch_dims(x, "deconv2d")?;
    let (k, cout, kin) = kernel_dims(kernel, "deconv2d")?;
    if kin != cin {
        return Err(Error::shape(format!(
            "deconv2d kernel {} expects {kin} input channels, input {} has {cin}",
            kernel.shape(),
            x.shape()
        )));
    }
    check_bias(bias, cout, "deconv2d")?;
    let win = Window::for_deconv(h, w, k, stride, padding)?;
    let kkc = k * k * cout;
    let rows = win.rows();
    let out_stride = win.big_h * win.big_w * cout;

    let mut out = vec![0.0; n * out_stride];
    let chunk = win.chunk(cout);
    let mut cols = vec![0.0; chunk.min(n) * rows * kkc];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let x_chunk = &x.data()[start * rows * cin..][..m * rows * cin];
        gemm(m * rows, cin, kkc, x_chunk, false, kernel.data(), true, &mut cols, 0.0);
        for e in 0..m {
            let dst = &mut out[(start + e) * out_stride..][..out_stride];
            win.col2im(&cols[e * rows * kkc..][..rows * kkc], cout, dst);
        }
    }
    add_bias(&mut out, bias.data());
    Ok(Tensor::from_parts(out_shape(batched, n, win.big_h, win.big_w, cout), out))
}

pub fn deconv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    stride: usize,
    dy: &Tensor,
) -> Result<ConvGrads> {
    let (n, h, w, cin, batched) = batch_dims(x, "deconv2d")?;
    let (k, cout, kin) = kernel_dims(kernel, "deconv2d")?;
    if kin != cin {
        return Err(Error::shape(format!("deconv2d kernel {} does not match input {}", kernel.shape(), x.shape())));
    }
    let win = Window::for_deconv(h, w, k, stride, padding)?;
    check_grad_shape(dy, &out_shape(batched, n, win.big_h, win.big_w, cout), "deconv2d")?;
    let kkc = k * k * cout;
    let rows = win.rows();
    let out_stride = win.big_h * win.big_w * cout;

    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernel.len()];
    let chunk = win.chunk(cout);
    let mut cols = vec![0.0; chunk.min(n) * rows * kkc];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        for e in 0..m {
            let src = &dy.data()[(start + e) * out_stride..][..out_stride];
            win.im2col(src, cout, &mut cols[e * rows * kkc..][..rows * kkc]);
        }
        let x_chunk = &x.data()[start * rows * cin..][..m * rows * cin];
        gemm(kkc, m * rows, cin, &cols, true, x_chunk, false, &mut dk, 1.0);
        let dx_chunk = &mut dx[start * rows * cin..][..m * rows * cin];
        gemm(m * rows, kkc, cin, &cols, false, kernel.data(), false, dx_chunk, 0.0);
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(x.shape().clone(), dx),
        kernel: Tensor::from_parts(kernel.shape().clone(), dk),
        bias: bias_grad(dy, cout),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], f: impl Fn(usize) -> f64) -> Tensor {
        let s = Shape::new(dims).unwrap();
        Tensor::from_vec(&s, (0..s.numel()).map(f).collect()).unwrap()
    }

    #[test]
    fn output_extents() {
        assert_eq!(conv_output_extent(32, 5, 1, Padding::Valid).unwrap(), 28);
        assert_eq!(conv_output_extent(32, 7, 1, Padding::Same).unwrap(), 32);
        assert_eq!(conv_output_extent(8, 5, 1, Padding::Valid).unwrap(), 4);
        assert!(conv_output_extent(5, 6, 1, Padding::Valid).is_err());
        assert!(conv_output_extent(8, 3, 2, Padding::Same).is_err());
        assert_eq!(deconv_output_extent(4, 3, 1, Padding::Valid).unwrap(), 6);
        assert_eq!(deconv_output_extent(1, 3, 2, Padding::Same).unwrap(), 2);
        assert_eq!(deconv_output_extent(4, 3, 2, Padding::Valid).unwrap(), 9);
    }

    #[test]
    fn model_layer_shapes() {
        let x = Tensor::zeros(&Shape::new(&[32, 32, 3]).unwrap());
        let k = Tensor::zeros(&Shape::new(&[5, 5, 3, 10]).unwrap());
        let b = Tensor::zeros(&Shape::new(&[10]).unwrap());
        assert_eq!(conv2d(&x, &k, &b, Padding::Valid, 1).unwrap().dims(), &[28, 28, 10]);
        let k = Tensor::zeros(&Shape::new(&[7, 7, 3, 40]).unwrap());
        let b = Tensor::zeros(&Shape::new(&[40]).unwrap());
        assert_eq!(conv2d(&x, &k, &b, Padding::Same, 1).unwrap().dims(), &[32, 32, 40]);

        let x = Tensor::zeros(&Shape::new(&[4, 4, 128]).unwrap());
        let k = Tensor::zeros(&Shape::new(&[3, 3, 3, 128]).unwrap());
        let b = Tensor::zeros(&Shape::new(&[3]).unwrap());
        assert_eq!(deconv2d(&x, &k, &b, Padding::Valid, 1).unwrap().dims(), &[6, 6, 3]);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = t(&[6, 6, 2], |i| i as f64 * 0.1);
        let k = Tensor::zeros(&Shape::new(&[3, 3, 2, 4]).unwrap());
        let b = t(&[4], |i| i as f64 - 1.5);
        let y = conv2d(&x, &k, &b, Padding::Valid, 1).unwrap();
        for px in y.data().chunks(4) {
            assert_eq!(px, b.data());
        }
    }

    #[test]
    fn kernel_channel_mismatch() {
        let x = Tensor::zeros(&Shape::new(&[6, 6, 2]).unwrap());
        let k = Tensor::zeros(&Shape::new(&[3, 3, 3, 4]).unwrap());
        let b = Tensor::zeros(&Shape::new(&[4]).unwrap());
        assert!(conv2d(&x, &k, &b, Padding::Valid, 1).is_err());
    }

    #[test]
    fn same_deconv_crops_bottom_right() {
        // single input pixel, all-ones 3x3 kernel: full output would be 3x3,
        // same output is the top-left 2x2 of it
        let x = Tensor::ones(&Shape::new(&[1, 1, 1]).unwrap());
        let k = t(&[3, 3, 1, 1], |i| i as f64);
        let b = Tensor::zeros(&Shape::new(&[1]).unwrap());
        let y = deconv2d(&x, &k, &b, Padding::Same, 2).unwrap();
        assert_eq!(y.dims(), &[2, 2, 1]);
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn batched_matches_single() {
        let x = t(&[3, 5, 5, 2], |i| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let k = t(&[3, 3, 2, 2], |i| ((i * 31) % 5) as f64 / 5.0 - 0.4);
        let b = t(&[2], |i| i as f64);
        let yb = conv2d(&x, &k, &b, Padding::Same, 1).unwrap();
        for i in 0..3 {
            let yi = conv2d(&x.index_outer(i).unwrap(), &k, &b, Padding::Same, 1).unwrap();
            assert_eq!(yb.index_outer(i).unwrap(), yi);
        }
    }
}
