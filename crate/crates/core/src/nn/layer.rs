use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerGrad, Matrix, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map followed by an elementwise activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// What a cached forward pass keeps for the backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerCache {
    pub input: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        if bias.len() != weight.rows() {
            return Err(NnError::Shape {
                what: "bias",
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(NnError::NonFinite("layer parameters"));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
        Self {
            weight,
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::Shape {
                what: "layer input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut z = self.weight.matvec(x);
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi = self.activation.apply(*zi + b);
        }
        Ok(z)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<LayerCache, NnError> {
        self.check_input(x)?;
        let mut pre = self.weight.matvec(x);
        for (zi, b) in pre.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        let output = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok(LayerCache {
            input: x.to_vec(),
            pre_activation: pre,
            output,
        })
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &[f64],
        grad: &mut LayerGrad,
    ) -> Result<Vec<f64>, NnError> {
        if cache.output.len() != self.output_dim() || cache.input.len() != self.input_dim() {
            return Err(NnError::MissingForward);
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.output)
            .map(|(g, &y)| g * self.activation.derivative_from_output(y))
            .collect();
        grad.weight.add_outer(&delta, &cache.input, 1.0);
        for (gb, d) in grad.bias.iter_mut().zip(&delta) {
            *gb += d;
        }
        Ok(self.weight.matvec_transposed(&delta))
    }
}
