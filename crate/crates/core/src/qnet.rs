//! The DQN and the supervised CNN baseline.
//!
//! Both share one body: 3×3 convolutions with ELU, a flatten, then three
//! fully connected layers (two hidden ELU layers plus the head). The Q head
//! emits two unsquashed action values; the sigmoid head emits a single
//! tumor probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    adam_step, conv_output_extent, glorot_init, AdamConfig, AdamState, Gradients, Scalar, Tape, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    QHead,
    SigmoidHead,
}

impl HeadKind {
    pub fn output_width(self) -> usize {
        match self {
            HeadKind::QHead => 2,
            HeadKind::SigmoidHead => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::QHead => "q_head",
            HeadKind::SigmoidHead => "sigmoid_head",
        }
    }
}

fn default_padding() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub stride: usize,
    #[serde(default = "default_padding")]
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, stride: usize) -> Self {
        Self {
            out_channels,
            stride,
            padding: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    /// Widths of the two hidden fully connected layers; the head is the third.
    pub hidden: [usize; 2],
    pub head: HeadKind,
}

impl ArchitectureConfig {
    /// Default DQN: 64×64 RGB overlay input, four stride-2 convolutions.
    pub fn dqn() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 3,
            conv: vec![
                ConvSpec::new(16, 2),
                ConvSpec::new(32, 2),
                ConvSpec::new(32, 2),
                ConvSpec::new(64, 2),
            ],
            hidden: [256, 64],
            head: HeadKind::QHead,
        }
    }

    /// Default supervised CNN: same body on the raw grayscale image.
    pub fn sdl() -> Self {
        Self {
            channels: 1,
            head: HeadKind::SigmoidHead,
            ..Self::dqn()
        }
    }

    /// Same body, different input extents.
    pub fn with_extents(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Parameter layout in checkpoint order.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidArchitecture("input extents must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArchitecture("dense widths must be positive".into()));
        }
        let (mut h, mut w, mut c) = (self.height, self.width, self.channels);
        let mut specs = Vec::with_capacity(self.conv.len() + 3);
        for (i, conv) in self.conv.iter().enumerate() {
            if conv.out_channels == 0 || conv.stride == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "conv{} needs positive channels and stride",
                    i + 1
                )));
            }
            let oh = conv_output_extent(h, conv.stride, conv.padding);
            let ow = conv_output_extent(w, conv.stride, conv.padding);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::InvalidArchitecture(format!(
                    "spatial extent collapses below 1 at conv{} ({h}×{w} input)",
                    i + 1
                )));
            };
            specs.push(LayerSpec {
                name: format!("conv{}", i + 1),
                kind: LayerKind::Conv {
                    stride: conv.stride,
                    padding: conv.padding,
                },
                weight_shape: vec![3, 3, c, conv.out_channels],
                bias_shape: vec![conv.out_channels],
            });
            (h, w, c) = (oh, ow, conv.out_channels);
        }
        let mut fan_in = h * w * c;
        let widths = [self.hidden[0], self.hidden[1], self.head.output_width()];
        for (i, &width) in widths.iter().enumerate() {
            let activation = match (i, self.head) {
                (0 | 1, _) => Activation::Elu,
                (_, HeadKind::QHead) => Activation::Identity,
                (_, HeadKind::SigmoidHead) => Activation::Sigmoid,
            };
            specs.push(LayerSpec {
                name: format!("dense{}", i + 1),
                kind: LayerKind::Dense { activation },
                weight_shape: vec![fan_in, width],
                bias_shape: vec![width],
            });
            fan_in = width;
        }
        Ok(specs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Elu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    Dense { activation: Activation },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Layer<T: Scalar> {
    pub spec: LayerSpec,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    weights_adam: AdamState<T>,
    bias_adam: AdamState<T>,
}

impl<T: Scalar> Layer<T> {
    fn new(spec: LayerSpec, weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.shape() != spec.weight_shape || bias.shape() != spec.bias_shape {
            return Err(Error::InvalidArchitecture(format!(
                "{}: expected weights {:?} and bias {:?}, got {:?} and {:?}",
                spec.name,
                spec.weight_shape,
                spec.bias_shape,
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weights_adam: AdamState::for_param(&weights),
            bias_adam: AdamState::for_param(&bias),
            spec,
            weights,
            bias,
        })
    }
}

/// Handles of a network's parameters on one tape, in layer order.
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<(Var, Var)>);

/// Parameters (and optimizer state) of a DQN or supervised CNN.
#[derive(Clone, Debug)]
pub struct QNetwork<T: Scalar> {
    config: ArchitectureConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> QNetwork<T> {
    /// Glorot-initialized weights and zero biases.
    pub fn build<R: Rng + ?Sized>(config: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        let layers = config
            .layer_specs()?
            .into_iter()
            .map(|spec| {
                let w = glorot_init(spec.weight_shape.clone(), rng)?;
                let b = Tensor::zeros(spec.bias_shape.clone())?;
                Layer::new(spec, w, b)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// Assembles a network from explicit `(weights, bias)` pairs.
    pub fn from_parameters(config: &ArchitectureConfig, params: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        let specs = config.layer_specs()?;
        if specs.len() != params.len() {
            return Err(Error::InvalidArchitecture(format!(
                "expected {} layers, got {}",
                specs.len(),
                params.len()
            )));
        }
        let layers = specs
            .into_iter()
            .zip(params)
            .map(|(spec, (w, b))| Layer::new(spec, w, b))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Output width of the final layer.
    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a, T>) -> ParamVars {
        ParamVars(
            self.layers
                .iter()
                .map(|l| (tape.param(&l.weights), tape.param(&l.bias)))
                .collect(),
        )
    }

    /// Records a forward pass of `input` onto `tape`, returning the head
    /// output (Q values, or the sigmoid probability).
    pub fn record(&self, tape: &mut Tape<'_, T>, params: &ParamVars, input: Var) -> Result<Var> {
        let expected = self.config.input_shape();
        if tape.shape(input) != expected {
            return Err(Error::InvalidShape(format!(
                "network expects input {expected:?}, got {:?}",
                tape.shape(input)
            )));
        }
        let mut x = input;
        let mut flattened = false;
        for (layer, &(w, b)) in self.layers.iter().zip(&params.0) {
            x = match layer.spec.kind {
                LayerKind::Conv { stride, padding } => {
                    let y = tape.conv2d(x, w, b, stride, padding)?;
                    tape.elu(y)?
                }
                LayerKind::Dense { activation } => {
                    if !flattened {
                        let n = tape.value(x).len();
                        x = tape.reshape(x, vec![n])?;
                        flattened = true;
                    }
                    let y = tape.dense(x, w, b)?;
                    match activation {
                        Activation::Identity => y,
                        Activation::Elu => tape.elu(y)?,
                        Activation::Sigmoid => tape.sigmoid(y)?,
                    }
                }
            };
        }
        Ok(x)
    }

    /// Raw head output for one input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let x = tape.constant_ref(input);
        let out = self.record(&mut tape, &params, x)?;
        Ok(tape.value(out).to_vec())
    }

    /// Action values `(q0, q1)` of a rendered `H×W×3` state.
    pub fn q_forward(&self, state: &Tensor<T>) -> Result<(T, T)> {
        self.expect_head(HeadKind::QHead)?;
        let q = self.forward(state)?;
        Ok((q[0], q[1]))
    }

    /// Tumor probability of a raw `H×W×1` image.
    pub fn sdl_forward(&self, image: &Tensor<T>) -> Result<T> {
        self.expect_head(HeadKind::SigmoidHead)?;
        Ok(self.forward(image)?[0])
    }

    pub fn expect_head(&self, head: HeadKind) -> Result<()> {
        if self.config.head == head {
            Ok(())
        } else {
            Err(Error::HeadMismatch {
                expected: head.name(),
                actual: self.config.head.name(),
            })
        }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weights.zero_grad();
            l.bias.zero_grad();
        }
    }

    /// Adds gradients from a backward pass into the parameter grad buffers.
    pub fn accumulate_gradients(&mut self, grads: &Gradients<T>, params: &ParamVars) -> Result<()> {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&params.0) {
            grads.accumulate_into(w, &mut layer.weights)?;
            grads.accumulate_into(b, &mut layer.bias)?;
        }
        Ok(())
    }

    /// One Adam step on every parameter, after which gradients are cleared.
    pub fn adam_update(&mut self, cfg: &AdamConfig) -> Result<()> {
        for l in &mut self.layers {
            adam_step(&mut l.weights, &mut l.weights_adam, cfg)?;
            adam_step(&mut l.bias, &mut l.bias_adam, cfg)?;
            l.weights.zero_grad();
            l.bias.zero_grad();
        }
        Ok(())
    }

    /// Converts parameters to another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> QNetwork<U> {
        let params = self.layers.iter().map(|l| (l.weights.cast(), l.bias.cast())).collect();
        QNetwork::from_parameters(&self.config, params).expect("same layout")
    }
}
