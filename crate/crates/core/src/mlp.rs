//! Deep, narrow fully connected networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::sugar::{make_activation, Activation, Method, SugarSpec};
use crate::tensor::{Tape, Tensor};

/// ChaCha stream used for weight initialisation.
pub(crate) const INIT_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub method: Method,
}

impl MlpConfig {
    /// Ten hidden layers of width two.
    pub fn deep_narrow(d_in: usize, d_out: usize, method: Method) -> Self {
        Self {
            d_in,
            d_out,
            hidden_layers: 10,
            width: 2,
            method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        self.method.validate()
    }

    /// `(fan_in, fan_out)` of every affine map, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.d_in;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.width));
            fan_in = self.width;
        }
        dims.push((fan_in, self.d_out));
        dims
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::deep_narrow(
            1,
            1,
            Method::Sugar(SugarSpec::direct(ActivationKind::bsilu())),
        )
    }
}

/// Affine map `x·W + b` with `W` stored `[fan_in × fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    activation: Activation,
    pub layers: Vec<Layer>,
}

/// Output of a forward pass plus each hidden layer's pre-activation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: Tensor,
    pub pre_activations: Vec<Tensor>,
}

/// Tape leaves for one layer, in the order of [`Mlp::layers`].
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Mlp {
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let activation = make_activation(config.method)?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Self {
            config,
            activation,
            layers,
        })
    }

    /// Symmetric He initialisation: `W ~ N(0, 2/fan_in)`, `b = 0`.
    pub fn init_he_symmetric(config: MlpConfig, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        for layer in &mut mlp.layers {
            let std = (2.0 / layer.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = normal.sample(&mut rng));
        }
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass on constant tensors; nothing is recorded.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                Ok(LayerParams {
                    weight: Tensor::new(l.weight.clone(), &[l.fan_in, l.fan_out])?,
                    bias: Tensor::new(l.bias.clone(), &[l.fan_out])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.forward_with(&params, x)
    }

    /// Registers every weight and bias on `tape` and runs the forward pass.
    pub fn forward_on(&self, tape: &Tape, x: &Tensor) -> Result<(ForwardPass, Vec<LayerParams>)> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                Ok(LayerParams {
                    weight: tape.param(l.weight.clone(), &[l.fan_in, l.fan_out])?,
                    bias: tape.param(l.bias.clone(), &[l.fan_out])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pass = self.forward_with(&params, x)?;
        Ok((pass, params))
    }

    pub fn forward_with(&self, params: &[LayerParams], x: &Tensor) -> Result<ForwardPass> {
        if x.shape().len() != 2 || x.shape()[1] != self.config.d_in {
            return Err(Error::Shape {
                op: "forward_mlp",
                lhs: x.shape().to_vec(),
                rhs: vec![x.shape().first().copied().unwrap_or(0), self.config.d_in],
            });
        }
        let (output_layer, hidden) = params.split_last().expect("at least one layer");
        let mut h = x.clone();
        let mut pre_activations = Vec::with_capacity(hidden.len());
        for p in hidden {
            let z = h.matmul(&p.weight)?.add(&p.bias)?;
            h = self.activation.apply(&z)?;
            pre_activations.push(z);
        }
        let output = h.matmul(&output_layer.weight)?.add(&output_layer.bias)?;
        Ok(ForwardPass {
            output,
            pre_activations,
        })
    }

    /// Flat view of every parameter, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average of squared errors over every element.
    Mean,
    /// Squared errors summed over batch and output dimensions.
    BatchSum,
}

pub fn mse_loss(pred: &Tensor, target: &Tensor, reduction: Reduction) -> Result<Tensor> {
    let sq = pred.sub(target)?.square();
    match reduction {
        Reduction::Mean => sq.mean(),
        Reduction::BatchSum => sq.sum(),
    }
}
