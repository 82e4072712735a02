//! Built-in architectures. Each chain lists the layer and the shape it must
//! produce, exactly as the architecture tables print them.
//!
//! Two chains need a resolution to be realizable:
//! - encoder: the deconvolutions go 4→6→8, which only a stride-1 valid
//!   transposed convolution produces (stride 2 would give 9).
//! - deep_encoder: the 768-wide dense output is reshaped to 1x1x768 before
//!   three stride-2 same transposed convolutions (1→2→4→8).

use super::{Head, LayerSpec, ModelName, ModelSpec};
use crate::layers::Padding;
use crate::tensor::Shape;

struct Chain {
    steps: Vec<(LayerSpec, Shape)>,
}

fn s(dims: &[usize]) -> Shape {
    Shape::new(dims).expect("static shape")
}

impl Chain {
    fn new() -> Chain {
        Chain { steps: Vec::new() }
    }

    fn then(mut self, layer: LayerSpec, out: &[usize]) -> Chain {
        self.steps.push((layer, s(out)));
        self
    }

    /// Hidden ReLU after every parameterized layer except the last; the head
    /// closes the network.
    fn finish(self, name: ModelName, head: Head) -> ModelSpec {
        let last_param = self
            .steps
            .iter()
            .rposition(|(l, _)| l.has_params())
            .expect("every network has parameters");
        let mut layers = Vec::new();
        let mut declared = vec![s(&super::INPUT_DIMS)];
        for (i, (layer, out)) in self.steps.into_iter().enumerate() {
            let relu = layer.has_params() && i != last_param;
            layers.push(layer);
            declared.push(out);
            if relu {
                layers.push(LayerSpec::Relu);
            }
        }
        match head {
            Head::ReluClip => layers.extend([LayerSpec::Relu, LayerSpec::Clip01]),
            Head::Sigmoid => layers.push(LayerSpec::Sigmoid),
        }
        ModelSpec {
            name: name.to_string(),
            head,
            layers,
            declared,
        }
    }
}

pub fn builtin(name: ModelName) -> ModelSpec {
    builtin_with_head(name, Head::ReluClip)
}

pub fn builtin_with_head(name: ModelName, head: Head) -> ModelSpec {
    use LayerSpec::{Flatten, MaxPool};
    let conv = LayerSpec::conv;
    let same = LayerSpec::same_conv;
    let dense = |units| LayerSpec::Dense { units };

    let chain = match name {
        ModelName::Shallow => Chain::new()
            .then(conv(5, 10), &[28, 28, 10])
            .then(conv(5, 20), &[24, 24, 20])
            .then(MaxPool, &[12, 12, 20])
            .then(conv(5, 20), &[8, 8, 20])
            .then(conv(1, 3), &[8, 8, 3])
            .then(Flatten, &[192]),
        ModelName::Deep => Chain::new()
            .then(conv(5, 20), &[28, 28, 20])
            .then(conv(5, 40), &[24, 24, 40])
            .then(MaxPool, &[12, 12, 40])
            .then(conv(3, 60), &[10, 10, 60])
            .then(conv(3, 80), &[8, 8, 80])
            .then(conv(1, 3), &[8, 8, 3])
            .then(Flatten, &[192]),
        ModelName::SuperDeep => Chain::new()
            .then(same(7, 40), &[32, 32, 40])
            .then(same(7, 40), &[32, 32, 40])
            .then(conv(7, 40), &[26, 26, 40])
            .then(conv(7, 60), &[20, 20, 60])
            .then(conv(5, 60), &[16, 16, 60])
            .then(MaxPool, &[8, 8, 60])
            .then(conv(5, 60), &[4, 4, 60])
            .then(conv(4, 192), &[1, 1, 192])
            .then(Flatten, &[192]),
        ModelName::FullyConnected => Chain::new()
            .then(conv(5, 10), &[28, 28, 10])
            .then(conv(5, 20), &[24, 24, 20])
            .then(MaxPool, &[12, 12, 20])
            .then(same(5, 30), &[12, 12, 30])
            .then(same(3, 40), &[12, 12, 40])
            .then(Flatten, &[5760])
            .then(dense(768), &[768])
            .then(dense(192), &[192]),
        ModelName::Encoder => Chain::new()
            .then(conv(5, 10), &[28, 28, 10])
            .then(conv(5, 20), &[24, 24, 20])
            .then(MaxPool, &[12, 12, 20])
            .then(conv(5, 30), &[8, 8, 30])
            .then(conv(5, 128), &[4, 4, 128])
            .then(LayerSpec::deconv(3, 3, Padding::Valid, 1), &[6, 6, 3])
            .then(LayerSpec::deconv(3, 3, Padding::Valid, 1), &[8, 8, 3])
            .then(Flatten, &[192]),
        ModelName::DeepEncoder => Chain::new()
            .then(conv(5, 30), &[28, 28, 30])
            .then(conv(5, 40), &[24, 24, 40])
            .then(MaxPool, &[12, 12, 40])
            .then(conv(5, 40), &[8, 8, 40])
            .then(conv(5, 40), &[4, 4, 40])
            .then(Flatten, &[640])
            .then(dense(768), &[768])
            .then(LayerSpec::Reshape { dims: vec![1, 1, 768] }, &[1, 1, 768])
            .then(LayerSpec::deconv(3, 40, Padding::Same, 2), &[2, 2, 40])
            .then(LayerSpec::deconv(3, 40, Padding::Same, 2), &[4, 4, 40])
            .then(LayerSpec::deconv(3, 3, Padding::Same, 2), &[8, 8, 3])
            .then(Flatten, &[192]),
    };
    chain.finish(name, head)
}
