//! Multilayer perceptrons applied row-wise to node feature matrices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

/// `y = act(x · W + b)` with `W: [in, out]` and `b: [1, out]`. The bias is optional.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (_, out) = weight.require_matrix("dense weight")?;
        if bias.shape() != [1, out] {
            return Err(Error::dim("dense bias", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias: Some(bias),
            activation,
        })
    }

    pub fn unbiased(weight: Tensor, activation: Activation) -> Result<Self> {
        weight.require_matrix("dense weight")?;
        Ok(Self {
            weight,
            bias: None,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Tensor::from_matrix(fan_in, fan_out, data).expect("sized"),
            bias: Some(Tensor::zeros(1, fan_out)),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// A stack of dense layers. An empty stack is the identity map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(
                    "mlp layer chain",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Builds `dims[0] → dims[1] → … → dims[n]`, with `hidden` activation on
    /// every layer but the last, which gets `last`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, last: Activation, rng: &mut R) -> Self {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                DenseLayer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    /// Drops every bias.
    pub fn without_bias(mut self) -> Self {
        self.layers.iter_mut().for_each(|l| l.bias = None);
        self
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
    }

    /// Registers every weight and bias as a parameter leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let vars: Vec<Var> = self.tensors().map(|t| tape.param(t.clone())).collect();
        BoundMlp::from_vars(self, &mut vars.into_iter()).expect("one var per tensor")
    }
}

/// An MLP whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Option<Var>, Activation)>,
}

impl BoundMlp {
    /// Pairs the layers of `params` with already-registered vars, consumed
    /// in [`MlpParams::tensors`] order.
    pub fn from_vars(params: &MlpParams, vars: &mut impl Iterator<Item = Var>) -> Result<Self> {
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            let missing = || Error::Contract("ran out of parameter vars while binding".into());
            let w = vars.next().ok_or_else(missing)?;
            let b = match layer.bias {
                Some(_) => Some(vars.next().ok_or_else(missing)?),
                None => None,
            };
            layers.push((w, b, layer.activation));
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mut dropout: Option<&mut Dropout<'_>>) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            let in_dim = tape.shape(w)[0];
            let x_shape = tape.shape(h);
            if x_shape.len() != 2 || x_shape[1] != in_dim {
                return Err(Error::dim("mlp_forward", x_shape, tape.shape(w)));
            }
            let mut z = tape.matmul(h, w)?;
            if let Some(b) = b {
                z = tape.add_row(z, b)?;
            }
            h = match act {
                Activation::Linear => z,
                Activation::Sigmoid => tape.sigmoid(z),
                Activation::Relu => {
                    let a = tape.relu(z);
                    match dropout.as_deref_mut() {
                        Some(d) => d.apply(tape, a)?,
                        None => a,
                    }
                }
            };
        }
        Ok(h)
    }
}

/// Train-time inverted dropout: kept units are scaled by `1 / (1 - rate)`.
pub struct Dropout<'a> {
    rate: f64,
    rng: &'a mut dyn rand::RngCore,
}

impl<'a> Dropout<'a> {
    pub fn new(rate: f64, rng: &'a mut dyn rand::RngCore) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate, rng })
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let keep = 1.0 / (1.0 - self.rate);
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Row-wise MLP evaluation. When `tape` is given the computation is recorded
/// there (parameters become leaves); otherwise a scratch tape is used.
pub fn mlp_forward(params: &MlpParams, x: &Tensor, tape: Option<&mut Tape>) -> Result<Tensor> {
    if let Some(d) = params.input_dim() {
        let (_, cols) = x.require_matrix("mlp_forward")?;
        if cols != d {
            return Err(Error::dim("mlp_forward", x.shape(), params.layers[0].weight.shape()));
        }
    }
    let mut scratch = Tape::new();
    let tape = tape.unwrap_or(&mut scratch);
    let bound = params.bind(tape);
    let xv = tape.constant(x.clone());
    let out = bound.forward(tape, xv, None)?;
    Ok(tape.value(out).clone())
}
