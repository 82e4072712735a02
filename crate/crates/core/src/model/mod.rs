//! The six image-completion architectures, declared as ordered layer lists
//! together with the intermediate shapes each one is supposed to produce.

mod zoo;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{self, Padding};
use crate::tensor::{Shape, Tensor};

pub use zoo::{builtin, builtin_with_head};

/// Length of the predicted center patch (8 × 8 × 3).
pub const OUTPUT_LEN: usize = 192;
pub const INPUT_DIMS: [usize; 3] = [32, 32, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Shallow,
    Deep,
    SuperDeep,
    FullyConnected,
    Encoder,
    DeepEncoder,
}

impl ModelName {
    pub const ALL: [ModelName; 6] = [
        ModelName::Shallow,
        ModelName::Deep,
        ModelName::SuperDeep,
        ModelName::FullyConnected,
        ModelName::Encoder,
        ModelName::DeepEncoder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Shallow => "shallow",
            ModelName::Deep => "deep",
            ModelName::SuperDeep => "super_deep",
            ModelName::FullyConnected => "fully_connected",
            ModelName::Encoder => "encoder",
            ModelName::DeepEncoder => "deep_encoder",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Lookup {
                kind: "model",
                name: s.to_string(),
            })
    }
}

/// Final activation of a network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// ReLU followed by a clip to [0, 1].
    #[default]
    ReluClip,
    Sigmoid,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::ReluClip => "relu_clip",
            Head::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu_clip" => Ok(Head::ReluClip),
            "sigmoid" => Ok(Head::Sigmoid),
            _ => Err(Error::Lookup {
                kind: "head",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        filters: usize,
        padding: Padding,
        stride: usize,
    },
    Deconv {
        kernel: usize,
        filters: usize,
        padding: Padding,
        stride: usize,
    },
    MaxPool,
    Dense {
        units: usize,
    },
    Flatten,
    /// Reshape each example to `dims`.
    Reshape {
        dims: Vec<usize>,
    },
    Relu,
    Sigmoid,
    Clip01,
}

fn hwc(input: &Shape, what: &str) -> Result<(usize, usize, usize)> {
    match *input.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::Shape(format!("{what} expects an HxWxC input, got {input}"))),
    }
}

impl LayerSpec {
    pub fn conv(kernel: usize, filters: usize) -> LayerSpec {
        LayerSpec::Conv {
            kernel,
            filters,
            padding: Padding::Valid,
            stride: 1,
        }
    }

    pub fn same_conv(kernel: usize, filters: usize) -> LayerSpec {
        LayerSpec::Conv {
            kernel,
            filters,
            padding: Padding::Same,
            stride: 1,
        }
    }

    pub fn deconv(kernel: usize, filters: usize, padding: Padding, stride: usize) -> LayerSpec {
        LayerSpec::Deconv {
            kernel,
            filters,
            padding,
            stride,
        }
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Clip01)
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::Deconv { .. } | LayerSpec::Dense { .. }
        )
    }

    /// Per-example output shape.
    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        match self {
            LayerSpec::Conv {
                kernel,
                filters,
                padding,
                stride,
            } => {
                let (h, w, _) = hwc(input, "convolution")?;
                Shape::new(&[
                    layers::conv_output_extent(h, *kernel, *stride, *padding)?,
                    layers::conv_output_extent(w, *kernel, *stride, *padding)?,
                    *filters,
                ])
            }
            LayerSpec::Deconv {
                kernel,
                filters,
                padding,
                stride,
            } => {
                let (h, w, _) = hwc(input, "deconvolution")?;
                Shape::new(&[
                    layers::deconv_output_extent(h, *kernel, *stride, *padding)?,
                    layers::deconv_output_extent(w, *kernel, *stride, *padding)?,
                    *filters,
                ])
            }
            LayerSpec::MaxPool => {
                let (h, w, c) = hwc(input, "max pooling")?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Shape(format!("2x2 max pooling needs even extents, got {input}")));
                }
                Shape::new(&[h / 2, w / 2, c])
            }
            LayerSpec::Dense { units } => match *input.dims() {
                [_] => Shape::new(&[*units]),
                _ => Err(Error::Shape(format!("dense layer expects a flat input, got {input}"))),
            },
            LayerSpec::Flatten => Shape::new(&[input.numel()]),
            LayerSpec::Reshape { dims } => {
                let target = Shape::new(dims)?;
                if target.numel() != input.numel() {
                    return Err(Error::Shape(format!("cannot reshape {input} into {target}")));
                }
                Ok(target)
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Clip01 => Ok(input.clone()),
        }
    }

    /// Shapes of the layer's parameter tensors, weight first then bias.
    pub fn param_shapes(&self, input: &Shape) -> Result<Vec<Shape>> {
        match self {
            LayerSpec::Conv { kernel, filters, .. } => {
                let (_, _, c) = hwc(input, "convolution")?;
                Ok(vec![Shape::new(&[*kernel, *kernel, c, *filters])?, Shape::new(&[*filters])?])
            }
            LayerSpec::Deconv { kernel, filters, .. } => {
                let (_, _, c) = hwc(input, "deconvolution")?;
                Ok(vec![Shape::new(&[*kernel, *kernel, *filters, c])?, Shape::new(&[*filters])?])
            }
            LayerSpec::Dense { units } => {
                self.output_shape(input)?;
                Ok(vec![Shape::new(&[input.numel(), *units])?, Shape::new(&[*units])?])
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Number of inputs feeding each output unit, for He initialization.
    /// For a transposed convolution this is `k·k·C_in`.
    pub fn fan_in(&self, input: &Shape) -> usize {
        match self {
            LayerSpec::Conv { kernel, .. } | LayerSpec::Deconv { kernel, .. } => {
                let c = input.dims().last().copied().unwrap_or(1);
                kernel * kernel * c
            }
            LayerSpec::Dense { .. } => input.numel(),
            _ => 0,
        }
    }

    /// Records the layer on `tape` for a batched input `x` (leading batch axis).
    pub fn apply(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let param = |i: usize| {
            params.get(i).copied().ok_or_else(|| {
                Error::Contract(format!("{} needs {} parameter tensors", self.describe(), i + 1))
            })
        };
        match self {
            LayerSpec::Conv { padding, stride, .. } => tape.conv2d(x, param(0)?, param(1)?, *padding, *stride),
            LayerSpec::Deconv { padding, stride, .. } => {
                tape.deconv2d(x, param(0)?, param(1)?, *padding, *stride)
            }
            LayerSpec::Dense { .. } => tape.dense(x, param(0)?, param(1)?),
            LayerSpec::MaxPool => tape.maxpool2x2(x),
            LayerSpec::Flatten => {
                let value = tape.value(x);
                let n = value.dims()[0];
                let shape = Shape::new(&[n, value.len() / n])?;
                tape.reshape(x, &shape)
            }
            LayerSpec::Reshape { dims } => {
                let n = tape.value(x).dims()[0];
                let mut full = vec![n];
                full.extend_from_slice(dims);
                tape.reshape(x, &Shape::new(&full)?)
            }
            LayerSpec::Relu => tape.relu(x),
            LayerSpec::Sigmoid => tape.sigmoid(x),
            LayerSpec::Clip01 => tape.clip01(x),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            LayerSpec::Conv {
                kernel,
                filters,
                padding,
                stride,
            } => {
                let mut s = format!("{kernel}x{kernel} conv ({filters})");
                if *padding == Padding::Same {
                    s.push_str(" same");
                }
                if *stride != 1 {
                    s.push_str(&format!(" stride {stride}"));
                }
                s
            }
            LayerSpec::Deconv {
                kernel,
                filters,
                padding,
                stride,
            } => format!("{kernel}x{kernel} deconv ({filters}) {padding} stride {stride}"),
            LayerSpec::MaxPool => "max pool 2x2".into(),
            LayerSpec::Dense { units } => format!("fully connected ({units})"),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Reshape { dims } => {
                let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                format!("reshape {}", parts.join("x"))
            }
            LayerSpec::Relu => "relu".into(),
            LayerSpec::Sigmoid => "sigmoid".into(),
            LayerSpec::Clip01 => "clip [0,1]".into(),
        }
    }
}

/// A network as an ordered layer list plus the shape chain it must follow:
/// `declared[0]` is the input shape and `declared[i]` the shape after the
/// i-th non-activation layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub head: Head,
    pub layers: Vec<LayerSpec>,
    pub declared: Vec<Shape>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditStep {
    pub step: usize,
    pub layer: String,
    pub expected: Option<Shape>,
    pub inferred: Option<Shape>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub model: String,
    pub steps: Vec<AuditStep>,
    pub passed: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |s: &Option<Shape>| s.as_ref().map_or_else(|| "-".to_string(), |s| s.to_string());
        writeln!(f, "model {}", self.model)?;
        writeln!(f, "  {:>4}  {:<32} {:>12} {:>12}  result", "step", "layer", "expected", "inferred")?;
        for s in &self.steps {
            write!(
                f,
                "  {:>4}  {:<32} {:>12} {:>12}  {}",
                s.step,
                s.layer,
                show(&s.expected),
                show(&s.inferred),
                if s.pass { "ok" } else { "FAIL" }
            )?;
            if let Some(e) = &s.error {
                write!(f, " ({e})")?;
            }
            writeln!(f)?;
        }
        write!(f, "  {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Parameter tensors in layer order (weight, bias for each parameterized layer).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl ModelSpec {
    pub fn input_shape(&self) -> Shape {
        Shape::new(&INPUT_DIMS).expect("static shape")
    }

    /// Per-layer input shapes by shape inference.
    fn layer_inputs(&self) -> Result<Vec<Shape>> {
        let mut shape = self.declared.first().cloned().unwrap_or_else(|| self.input_shape());
        let mut inputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("{} layer {i} ({}): {e}", self.name, layer.describe())))?;
            inputs.push(std::mem::replace(&mut shape, next));
        }
        inputs.push(shape);
        Ok(inputs)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(self.layer_inputs()?.pop().expect("non-empty"))
    }

    /// Walks the layers with the kernels' shape arithmetic and compares every
    /// structural step with the declared chain.
    pub fn audit_shapes(&self) -> AuditReport {
        let mut steps = Vec::new();
        let mut declared = self.declared.iter();
        let Some(input) = declared.next().cloned() else {
            return AuditReport {
                model: self.name.clone(),
                steps,
                passed: false,
            };
        };
        steps.push(AuditStep {
            step: 0,
            layer: "input".into(),
            expected: Some(input.clone()),
            inferred: Some(self.input_shape()),
            error: None,
            pass: input == self.input_shape(),
        });

        let mut current = input;
        let mut broken = false;
        for layer in &self.layers {
            let inferred = layer.output_shape(&current);
            if layer.is_activation() {
                if let Ok(s) = inferred {
                    current = s;
                }
                continue;
            }
            let expected = declared.next().cloned();
            let step = steps.len();
            match inferred {
                Ok(shape) => {
                    let pass = expected.as_ref() == Some(&shape);
                    let error = (!pass && expected.is_none()).then(|| "no declared shape".to_string());
                    steps.push(AuditStep {
                        step,
                        layer: layer.describe(),
                        expected,
                        inferred: Some(shape.clone()),
                        error,
                        pass,
                    });
                    current = shape;
                }
                Err(e) => {
                    steps.push(AuditStep {
                        step,
                        layer: layer.describe(),
                        expected,
                        inferred: None,
                        error: Some(e.to_string()),
                        pass: false,
                    });
                    broken = true;
                    break;
                }
            }
        }
        if !broken {
            for extra in declared {
                steps.push(AuditStep {
                    step: steps.len(),
                    layer: "(missing layer)".into(),
                    expected: Some(extra.clone()),
                    inferred: None,
                    error: Some("declared shape has no layer".into()),
                    pass: false,
                });
            }
            if current.dims() != [OUTPUT_LEN] {
                steps.push(AuditStep {
                    step: steps.len(),
                    layer: "output".into(),
                    expected: Some(Shape::new(&[OUTPUT_LEN]).expect("static")),
                    inferred: Some(current),
                    error: Some("network must end in a 192-vector".into()),
                    pass: false,
                });
            }
        }
        let passed = steps.iter().all(|s| s.pass);
        AuditReport {
            model: self.name.clone(),
            steps,
            passed,
        }
    }

    /// Shapes of every parameter tensor in [`ParamSet`] order.
    pub fn param_shapes(&self) -> Result<Vec<Shape>> {
        let inputs = self.layer_inputs()?;
        let mut shapes = Vec::new();
        for (layer, input) in self.layers.iter().zip(&inputs) {
            shapes.extend(layer.param_shapes(input)?);
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(Shape::numel).sum())
    }

    /// He-normal weights (std √(2/fan_in)) and zero biases, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = self.layer_inputs()?;
        let mut tensors = Vec::new();
        for (layer, input) in self.layers.iter().zip(&inputs) {
            let shapes = layer.param_shapes(input)?;
            let Some((weight, rest)) = shapes.split_first() else { continue };
            let std = (2.0 / layer.fan_in(input) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
            let data = (0..weight.numel()).map(|_| normal.sample(&mut rng)).collect();
            tensors.push(Tensor::from_parts(weight.clone(), data));
            tensors.extend(rest.iter().map(Tensor::zeros));
        }
        Ok(ParamSet { tensors })
    }

    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes()?;
        if shapes.len() != params.tensors.len() {
            return Err(Error::Contract(format!(
                "{} expects {} parameter tensors, got {}",
                self.name,
                shapes.len(),
                params.tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&params.tensors).enumerate() {
            if s != t.shape() {
                return Err(Error::Shape(format!(
                    "{} parameter {i} should be {s}, got {}",
                    self.name,
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records the whole network on `tape`. `x` must be batched `(N, 32, 32, 3)`;
    /// `params` are the tape handles of the parameter tensors in order.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let mut rest = params;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let n = if layer.has_params() { 2 } else { 0 };
            if rest.len() < n {
                return Err(Error::Contract(format!("{} ran out of parameters at layer {i}", self.name)));
            }
            let (mine, tail) = rest.split_at(n);
            rest = tail;
            h = layer
                .apply(tape, h, mine)
                .map_err(|e| Error::Shape(format!("{} layer {i} ({}): {e}", self.name, layer.describe())))?;
        }
        Ok(h)
    }

    /// Batched inference: `(N, 32, 32, 3)` → `(N, 192)`.
    pub fn forward_batch(&self, params: &ParamSet, inputs: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let x = tape.constant(inputs.clone());
        let y = self.forward_tape(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    /// Single image `(32, 32, 3)` → `(192)`.
    pub fn forward(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        let batch = Tensor::stack(std::slice::from_ref(input))?;
        let out = self.forward_batch(params, &batch)?;
        out.into_shape(&Shape::new(&[OUTPUT_LEN])?)
    }
}
