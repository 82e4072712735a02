//! Loop-level reference implementations shared by the oracle tests.

use inpaint::layers::Padding;
use inpaint::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let s = Shape::new(dims).unwrap();
    Tensor::from_vec(&s, (0..s.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn assert_close(got: &Tensor, want: &Tensor, tol: f64, what: &str) {
    assert_eq!(got.dims(), want.dims(), "{what}: shape");
    for (i, (a, b)) in got.data().iter().zip(want.data()).enumerate() {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "{what}: element {i}: {a} vs {b}");
    }
}

/// Six nested loops (plus batch), zero padding read as out-of-range.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, pad: usize, stride: usize, oh: usize, ow: usize) -> Tensor {
    let &[n, h, w, cin] = x.dims() else { panic!() };
    let &[kh, kw, _, cout] = k.dims() else { panic!() };
    let mut out = Tensor::zeros(&Shape::new(&[n, oh, ow, cout]).unwrap());
    for e in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for co in 0..cout {
                    let mut acc = b.get(&[co]).unwrap();
                    for di in 0..kh {
                        for dj in 0..kw {
                            for ci in 0..cin {
                                let r = (i * stride + di) as isize - pad as isize;
                                let c = (j * stride + dj) as isize - pad as isize;
                                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                    continue;
                                }
                                acc += x.get(&[e, r as usize, c as usize, ci]).unwrap()
                                    * k.get(&[di, dj, ci, co]).unwrap();
                            }
                        }
                    }
                    out.set(&[e, i, j, co], acc).unwrap();
                }
            }
        }
    }
    out
}

/// Scatter every input pixel through the kernel, then crop.
pub fn naive_deconv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let &[n, h, w, cin] = x.dims() else { panic!() };
    let &[ks, _, cout, _] = k.dims() else { panic!() };
    let (fh, fw) = ((h - 1) * stride + ks, (w - 1) * stride + ks);
    let (oh, ow, off) = match padding {
        Padding::Valid => (fh, fw, 0),
        Padding::Same => (h * stride, w * stride, ks.saturating_sub(stride) / 2),
    };
    let mut full = vec![0.0; n * fh.max(oh + off) * fw.max(ow + off) * cout];
    let (gh, gw) = (fh.max(oh + off), fw.max(ow + off));
    for e in 0..n {
        for i in 0..h {
            for j in 0..w {
                for ci in 0..cin {
                    let v = x.get(&[e, i, j, ci]).unwrap();
                    for di in 0..ks {
                        for dj in 0..ks {
                            for co in 0..cout {
                                let (r, c) = (i * stride + di, j * stride + dj);
                                full[((e * gh + r) * gw + c) * cout + co] += v * k.get(&[di, dj, co, ci]).unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = Tensor::zeros(&Shape::new(&[n, oh, ow, cout]).unwrap());
    for e in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for co in 0..cout {
                    let v = full[((e * gh + i + off) * gw + j + off) * cout + co] + b.get(&[co]).unwrap();
                    out.set(&[e, i, j, co], v).unwrap();
                }
            }
        }
    }
    out
}

/// 2x2 stride-2 max with the first maximum (row-major) winning ties.
/// Returns the pooled values and the flat input index of each winner.
pub fn naive_maxpool(x: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let &[h, w, c] = x.dims() else { panic!() };
    let (mut vals, mut args) = (Vec::new(), Vec::new());
    for i in 0..h / 2 {
        for j in 0..w / 2 {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (r, cc) = (2 * i + di, 2 * j + dj);
                    let v = x.get(&[r, cc, ch]).unwrap();
                    if v > best {
                        best = v;
                        arg = (r * w + cc) * c + ch;
                    }
                }
                vals.push(best);
                args.push(arg);
            }
        }
    }
    (vals, args)
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let &[m, k] = a.dims() else { panic!() };
    let n = b.dims()[1];
    let mut out = Tensor::zeros(&Shape::new(&[m, n]).unwrap());
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a.get(&[i, l]).unwrap() * b.get(&[l, j]).unwrap();
            }
            out.set(&[i, j], acc).unwrap();
        }
    }
    out
}

/// Per-example mean of squared differences over rows of (N, D).
pub fn naive_mse(y: &Tensor, yhat: &Tensor) -> Vec<f64> {
    let &[n, d] = y.dims() else { panic!() };
    (0..n)
        .map(|e| {
            let mut s = 0.0;
            for i in 0..d {
                let diff = y.get(&[e, i]).unwrap() - yhat.get(&[e, i]).unwrap();
                s += diff * diff;
            }
            s / d as f64
        })
        .collect()
}
