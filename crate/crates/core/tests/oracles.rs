//! Layer kernels against straightforward loop implementations.

use inpaint::layers::{self, Padding};
use inpaint::loss;
use inpaint::optim::AdamState;
use inpaint::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::naive::*;

const INSTANCES: usize = 120;

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..INSTANCES {
        let k = [1, 2, 3, 4, 5][rng.random_range(0..5)];
        let h = rng.random_range(k.max(1)..=8);
        let w = rng.random_range(k.max(1)..=8);
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=4);
        let n = rng.random_range(1..=2);
        let (padding, stride) = match rng.random_range(0..3) {
            0 => (Padding::Valid, 1),
            1 => (Padding::Same, 1),
            _ => (Padding::Valid, 2),
        };
        let x = random(&mut rng, &[n, h, w, cin]);
        let kernel = random(&mut rng, &[k, k, cin, cout]);
        let bias = random(&mut rng, &[cout]);
        let got = layers::conv2d(&x, &kernel, &bias, padding, stride).unwrap();
        let pad = if padding == Padding::Same { (k - 1) / 2 } else { 0 };
        let oh = layers::conv_output_extent(h, k, stride, padding).unwrap();
        let ow = layers::conv_output_extent(w, k, stride, padding).unwrap();
        let want = naive_conv(&x, &kernel, &bias, pad, stride, oh, ow);
        assert_close(&got, &want, 1e-12, &format!("conv case {case}"));
    }
}

#[test]
fn deconv_matches_scatter_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..INSTANCES {
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let x = random(&mut rng, &[1, h, w, cin]);
        let kernel = random(&mut rng, &[k, k, cout, cin]);
        let bias = random(&mut rng, &[cout]);
        let got = layers::deconv2d(&x, &kernel, &bias, padding, stride).unwrap();
        let want = naive_deconv(&x, &kernel, &bias, stride, padding);
        assert_close(&got, &want, 1e-12, &format!("deconv case {case}"));
    }
}

#[test]
fn deconv_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..INSTANCES {
        let k = [1, 3, 4, 5][rng.random_range(0..4)];
        let stride = rng.random_range(1..=2);
        let padding = if stride == 1 && rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let small = rng.random_range(1..=4);
        let (a, b) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let big = layers::deconv_output_extent(small, k, stride, padding).unwrap();
        assert_eq!(layers::conv_output_extent(big, k, stride, padding).unwrap(), small);

        let kernel = random(&mut rng, &[k, k, a, b]);
        let x = random(&mut rng, &[big, big, a]);
        let y = random(&mut rng, &[small, small, b]);
        let conv = layers::conv2d(&x, &kernel, &Tensor::zeros(&Shape::new(&[b]).unwrap()), padding, stride).unwrap();
        let deconv = layers::deconv2d(&y, &kernel, &Tensor::zeros(&Shape::new(&[a]).unwrap()), padding, stride).unwrap();
        let lhs = conv.dot(&y).unwrap();
        let rhs = x.dot(&deconv).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "case {case}: {lhs} vs {rhs}");
    }
}

#[test]
fn maxpool_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..INSTANCES {
        let (h, w, c) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4), rng.random_range(1..=3));
        // coarse values make ties common
        let x = random(&mut rng, &[h, w, c]).map(|v| (v * 3.0).round());
        let pooled = layers::maxpool2x2_forward(&x).unwrap();
        let (vals, args) = naive_maxpool(&x);
        assert_eq!(pooled.output.data(), &vals[..], "case {case}");
        assert_eq!(pooled.argmax, args, "case {case}");
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..INSTANCES {
        let (m, k, n) = (rng.random_range(1..=9), rng.random_range(1..=9), rng.random_range(1..=9));
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        assert_close(&a.matmul(&b).unwrap(), &naive_matmul(&a, &b), 1e-12, "matmul");
    }
}

#[test]
fn dense_matches_one_row_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..INSTANCES {
        let (i, o) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let x = random(&mut rng, &[i]);
        let w = random(&mut rng, &[i, o]);
        let b = random(&mut rng, &[o]);
        let row = x.reshape(&Shape::new(&[1, i]).unwrap()).unwrap();
        let want = row.matmul(&w).unwrap().reshape(&Shape::new(&[o]).unwrap()).unwrap().add(&b).unwrap();
        assert_close(&layers::dense(&x, &w, &b).unwrap(), &want, 1e-12, "dense");
    }
}

#[test]
fn mse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=4);
        let y = random(&mut rng, &[n, 192]);
        let yhat = random(&mut rng, &[n, 192]);
        let per = naive_mse(&y, &yhat);
        let want = per.iter().sum::<f64>() / n as f64;
        let got = loss::mse(&y, &yhat).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        for (a, b) in loss::per_example_mse(&y, &yhat).unwrap().iter().zip(&per) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn adam_matches_scalar_reference() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..20 {
        let theta0: f64 = rng.random_range(-1.0..1.0);
        let g: f64 = rng.random_range(-1.0..1.0);
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let s = Shape::new(&[1]).unwrap();
        let mut params = vec![Tensor::full(&s, theta0)];
        let mut adam = AdamState::new(&params);
        for _ in 0..2 {
            adam.step(&mut params, &[Tensor::full(&s, g)], lr).unwrap();
        }
        assert!((params[0].data()[0] - theta).abs() < 1e-12);
        assert_eq!(adam.t, 2);
    }
}

#[test]
fn clip_relu_sigmoid_definitions() {
    let x = Tensor::from_vec(&Shape::new(&[4]).unwrap(), vec![-1.0, 0.0, 0.4, 1.7]).unwrap();
    assert_eq!(layers::relu(&x).data(), &[0.0, 0.0, 0.4, 1.7]);
    assert_eq!(layers::clip01(&x).data(), &[0.0, 0.0, 0.4, 1.0]);
    assert_eq!(layers::sigmoid(&x).data()[1], 0.5);
}
