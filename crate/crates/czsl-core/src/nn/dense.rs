//! Fully connected networks: a layer list with Xavier-uniform init, a plain
//! forward pass, and a tape forward that registers parameters for backward.

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::rng::Rng;
use super::tape::{Tape, Var};

/// Negative-side slope shared by every leaky ReLU in the system.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky-relu",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "leaky-relu" => Ok(Activation::LeakyRelu),
            other => Err(Error::format(format!("unknown activation tag `{other}`"))),
        }
    }

    fn slope(self) -> Option<f64> {
        match self {
            Activation::Linear => None,
            Activation::Relu => Some(0.0),
            Activation::LeakyRelu => Some(LEAKY_SLOPE),
        }
    }

    fn apply_value(self, v: f64) -> f64 {
        match self.slope() {
            None => v,
            Some(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    /// in_dim x out_dim; activations are row vectors multiplied on the left.
    pub weight: Matrix,
    /// 1 x out_dim.
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Output of a tape forward: the activations node plus the parameter nodes
/// (weight, bias per layer, in declaration order) for gradient lookup.
pub struct TapedForward {
    pub output: Var,
    pub params: Vec<Var>,
}

impl DenseNet {
    /// Builds a chain dims[0] -> dims[1] -> ... with one activation per layer.
    /// Weights are Xavier-uniform (±sqrt(6/(fan_in+fan_out))), biases zero.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("a network needs at least one layer"));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::contract(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract("zero-width layer"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = Matrix::zeros(fan_in, fan_out);
            for v in weight.data_mut() {
                *v = rng.uniform_symmetric(bound);
            }
            layers.push(DenseLayer {
                weight,
                bias: Matrix::zeros(1, fan_out),
                activation: act,
            });
        }
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("a network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::shape(format!(
                    "layer output {} feeds layer input {}",
                    w[0].weight.cols(),
                    w[1].weight.rows()
                )));
            }
        }
        for l in &layers {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::shape("bias width differs from layer output width"));
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    /// Parameter matrices in declaration order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params().iter().map(|p| p.shape()).collect()
    }

    /// Plain forward pass with no gradient bookkeeping.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "{}-dim input into a {}-dim network",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let mut out = h.matmul(&layer.weight)?;
            for r in 0..out.rows() {
                for (v, b) in out.row_mut(r).iter_mut().zip(layer.bias.row(0)) {
                    *v = layer.activation.apply_value(*v + b);
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Forward pass on a tape. Registers every parameter as a tape node so
    /// the caller can read gradients after backward.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<TapedForward> {
        if tape.value(x).cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "{}-dim input into a {}-dim network",
                tape.value(x).cols(),
                self.input_dim()
            )));
        }
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let mut h = x;
        for layer in &self.layers {
            let w = tape.param(&layer.weight);
            let b = tape.param(&layer.bias);
            params.push(w);
            params.push(b);
            h = tape.matmul(h, w)?;
            h = tape.add_row_bias(h, b)?;
            if let Some(slope) = layer.activation.slope() {
                h = tape.leaky_relu(h, slope);
            }
        }
        Ok(TapedForward { output: h, params })
    }
}
