//! Central-difference gradient verification.
//!
//! Every check builds `loss = Σ layer(x) ⊙ R` with a fixed random `R`, so
//! each output element carries a distinct upstream weight, then compares
//! the tape's gradients with `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` elementwise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Padding;
use crate::model::{LayerSpec, ModelSpec, ParamSet};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Elements within this many steps of a kink are not compared.
const KINK_MARGIN: f64 = 10.0;

/// Per-element central differences of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around flat index {i} ({up}, {down})"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::from_vec(x.shape(), grad)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub seed: u64,
    /// Examples in the probe batch.
    pub batch: usize,
    /// Probe with an all-zero input instead of a random one.
    pub zero_input: bool,
    /// Negates the analytic gradient before comparing; a self-test showing
    /// the checker catches a sign error.
    pub flip_sign: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: DEFAULT_STEP,
            seed: 0,
            batch: 2,
            zero_input: false,
            flip_sign: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub compared: usize,
    /// Elements excluded because they sit on a kink (ReLU/clip edge, pool tie).
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layer: String,
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }

    pub fn skipped(&self) -> usize {
        self.entries.iter().map(|e| e.skipped).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max rel err {:.3e}  {}",
            self.layer,
            self.max_error(),
            if self.passed() { "ok" } else { "FAIL" }
        )?;
        for e in &self.entries {
            write!(f, "\n    {:<10} {:.3e} over {} elements", e.name, e.max_rel_error, e.compared)?;
            if e.skipped > 0 {
                write!(f, " ({} skipped at kinks)", e.skipped)?;
            }
        }
        Ok(())
    }
}

fn compare(name: &str, analytic: &Tensor, numeric: &Tensor, skip: &[bool], flip: bool) -> GradCheckEntry {
    let sign = if flip { -1.0 } else { 1.0 };
    let mut max_rel_error = 0.0f64;
    let mut compared = 0;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        if skip.get(i).copied().unwrap_or(false) {
            continue;
        }
        compared += 1;
        max_rel_error = max_rel_error.max(relative_error(sign * a, n));
    }
    GradCheckEntry {
        name: name.to_string(),
        max_rel_error,
        compared,
        skipped: analytic.len() - compared,
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &Shape, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_parts(shape.clone(), data)
}

/// Marks input elements too close to a non-differentiable point of `layer`.
fn kink_mask(layer: &LayerSpec, x: &Tensor, h: f64) -> Vec<bool> {
    let margin = KINK_MARGIN * h;
    match layer {
        LayerSpec::Relu => x.data().iter().map(|v| v.abs() < margin).collect(),
        LayerSpec::Clip01 => x
            .data()
            .iter()
            .map(|v| v.abs() < margin || (v - 1.0).abs() < margin)
            .collect(),
        LayerSpec::MaxPool => {
            let &[n, hgt, w, c] = x.dims() else {
                return vec![false; x.len()];
            };
            let mut skip = vec![false; x.len()];
            for b in 0..n {
                for i in 0..hgt / 2 {
                    for j in 0..w / 2 {
                        for ch in 0..c {
                            let idx: Vec<usize> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                                .iter()
                                .map(|(di, dj)| ((b * hgt + 2 * i + di) * w + 2 * j + dj) * c + ch)
                                .collect();
                            for &p in &idx {
                                if idx.iter().any(|&q| q != p && (x.data()[p] - x.data()[q]).abs() < margin) {
                                    skip[p] = true;
                                }
                            }
                        }
                    }
                }
            }
            skip
        }
        _ => vec![false; x.len()],
    }
}

/// Checks one layer on a random batch of `input` (per-example shape).
pub fn grad_check(layer: &LayerSpec, input: &Shape, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batched = input.batched(cfg.batch)?;
    let (lo, hi) = match layer {
        LayerSpec::Clip01 => (-0.5, 1.5),
        _ => (-1.0, 1.0),
    };
    let mut x = uniform(&mut rng, &batched, lo, hi);
    if cfg.zero_input {
        x = Tensor::zeros(&batched);
    }
    let params: Vec<Tensor> = layer
        .param_shapes(input)?
        .iter()
        .map(|s| uniform(&mut rng, s, -1.0, 1.0))
        .collect();
    let out_shape = layer.output_shape(input)?.batched(cfg.batch)?;
    let weights = uniform(&mut rng, &out_shape, -1.0, 1.0);

    let objective = |x: &Tensor, params: &[Tensor]| -> Result<(Tape, Var, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let pv: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let y = layer.apply(&mut tape, xv, &pv)?;
        let r = tape.constant(weights.clone());
        let prod = tape.mul(y, r)?;
        let loss = tape.sum(prod)?;
        Ok((tape, loss, xv, pv))
    };
    let eval = |x: &Tensor, params: &[Tensor]| -> Result<f64> {
        let (tape, loss, _, _) = objective(x, params)?;
        Ok(tape.value(loss).data()[0])
    };

    let (mut tape, loss, xv, pv) = objective(&x, &params)?;
    let mut grads = tape.backward(loss)?;
    let names: &[&str] = match layer {
        LayerSpec::Dense { .. } => &["weight", "bias"],
        _ => &["kernel", "bias"],
    };

    let mut entries = Vec::new();
    let dx = grads.take(xv).expect("input is a leaf");
    let nx = finite_diff_grad(|probe| eval(probe, &params), &x, cfg.step)?;
    entries.push(compare("input", &dx, &nx, &kink_mask(layer, &x, cfg.step), cfg.flip_sign));

    for (i, v) in pv.iter().enumerate() {
        let dp = grads.take(*v).expect("parameter is a leaf");
        let np = finite_diff_grad(
            |probe| {
                let mut ps = params.clone();
                ps[i] = probe.clone();
                eval(&x, &ps)
            },
            &params[i],
            cfg.step,
        )?;
        entries.push(compare(names[i], &dp, &np, &[], cfg.flip_sign));
    }
    Ok(GradCheckReport {
        layer: layer.describe(),
        entries,
        tolerance: TOLERANCE,
    })
}

/// Checks the MSE loss head on `len`-wide predictions and targets.
pub fn grad_check_mse(len: usize, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = Shape::new(&[cfg.batch, len])?;
    let pred = uniform(&mut rng, &shape, 0.0, 1.0);
    let target = uniform(&mut rng, &shape, 0.0, 1.0);
    let eval = |p: &Tensor, t: &Tensor| crate::loss::mse(t, p);

    let mut tape = Tape::new();
    let pv = tape.leaf(pred.clone());
    let tv = tape.leaf(target.clone());
    let loss = tape.mse(pv, tv)?;
    let mut grads = tape.backward(loss)?;
    let dp = grads.take(pv).expect("leaf");
    let dt = grads.take(tv).expect("leaf");
    let np = finite_diff_grad(|probe| eval(probe, &target), &pred, cfg.step)?;
    let nt = finite_diff_grad(|probe| eval(&pred, probe), &target, cfg.step)?;
    Ok(GradCheckReport {
        layer: format!("mse head ({len})"),
        entries: vec![
            compare("prediction", &dp, &np, &[], cfg.flip_sign),
            compare("target", &dt, &nt, &[], cfg.flip_sign),
        ],
        tolerance: TOLERANCE,
    })
}

/// End-to-end check of a whole network's parameter gradients under the
/// MSE loss against a random target.
pub fn grad_check_model(spec: &ModelSpec, params: &ParamSet, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    spec.check_params(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = uniform(&mut rng, &spec.input_shape().batched(cfg.batch)?, 0.0, 1.0);
    let target = uniform(&mut rng, &spec.output_shape()?.batched(cfg.batch)?, 0.0, 1.0);

    let eval = |ps: &ParamSet| -> Result<f64> {
        let y = spec.forward_batch(ps, &x)?;
        crate::loss::mse(&target, &y)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let xv = tape.constant(x.clone());
    let tv = tape.constant(target.clone());
    let y = spec.forward_tape(&mut tape, &vars, xv)?;
    let loss = tape.mse(y, tv)?;
    let mut grads = tape.backward(loss)?;

    let mut entries = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.take(*v).expect("leaf");
        let numeric = finite_diff_grad(
            |probe| {
                let mut ps = params.clone();
                ps.tensors[i] = probe.clone();
                eval(&ps)
            },
            &params.tensors[i],
            cfg.step,
        )?;
        entries.push(compare(&format!("param{i}"), &analytic, &numeric, &[], cfg.flip_sign));
    }
    Ok(GradCheckReport {
        layer: format!("model {}", spec.name),
        entries,
        tolerance: TOLERANCE,
    })
}

/// What a suite case exercises.
#[derive(Clone, Debug)]
pub enum CheckTarget {
    Layer { layer: LayerSpec, input: Shape },
    MseHead { len: usize },
}

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub target: CheckTarget,
}

impl GradCheckCase {
    pub fn run(&self, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
        let mut report = match &self.target {
            CheckTarget::Layer { layer, input } => grad_check(layer, input, cfg)?,
            CheckTarget::MseHead { len } => grad_check_mse(*len, cfg)?,
        };
        report.layer = self.name.to_string();
        Ok(report)
    }
}

/// One small case per layer kind the architectures use.
pub fn standard_cases() -> Vec<GradCheckCase> {
    let s = |d: &[usize]| Shape::new(d).expect("static shape");
    let layer = |name, layer, input: Shape| GradCheckCase {
        name,
        target: CheckTarget::Layer { layer, input },
    };
    vec![
        layer("conv valid 3x3", LayerSpec::conv(3, 4), s(&[6, 6, 3])),
        layer("conv same 3x3", LayerSpec::same_conv(3, 4), s(&[5, 5, 3])),
        layer("conv same 4x4 (even k)", LayerSpec::same_conv(4, 2), s(&[5, 5, 2])),
        layer("maxpool 2x2", LayerSpec::MaxPool, s(&[6, 6, 3])),
        layer(
            "deconv valid stride 1",
            LayerSpec::deconv(3, 3, Padding::Valid, 1),
            s(&[4, 4, 3]),
        ),
        layer(
            "deconv same stride 2",
            LayerSpec::deconv(3, 3, Padding::Same, 2),
            s(&[3, 3, 4]),
        ),
        layer("dense", LayerSpec::Dense { units: 5 }, s(&[12])),
        layer("flatten", LayerSpec::Flatten, s(&[3, 3, 2])),
        layer("relu", LayerSpec::Relu, s(&[4, 4, 3])),
        layer("sigmoid", LayerSpec::Sigmoid, s(&[4, 4, 3])),
        layer("clip01", LayerSpec::Clip01, s(&[4, 4, 3])),
        GradCheckCase {
            name: "mse head",
            target: CheckTarget::MseHead { len: 192 },
        },
    ]
}
