use super::{DenseLayer, Matrix, NnError};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.data().iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.data_mut().iter_mut().chain(self.bias.iter_mut())
    }
}

/// Per-parameter gradients for every dense layer of a model, in the model's
/// layer order. Additive, so several losses can be accumulated before a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_for(layers: &[&DenseLayer]) -> Self {
        Self {
            layers: layers.iter().map(|l| LayerGrad::zeros_like(l)).collect(),
        }
    }

    pub fn from_layers(layers: Vec<LayerGrad>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerGrad] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerGrad] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerGrad> {
        self.layers
    }

    pub fn is_congruent_with(&self, layers: &[&DenseLayer]) -> bool {
        self.layers.len() == layers.len()
            && self
                .layers
                .iter()
                .zip(layers)
                .all(|(g, l)| g.weight.same_shape(&l.weight) && g.bias.len() == l.bias.len())
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<(), NnError> {
        if self.layers.len() != other.layers.len() {
            return Err(NnError::Shape {
                what: "gradient layer count",
                expected: self.layers.len(),
                got: other.layers.len(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if !a.weight.same_shape(&b.weight) || a.bias.len() != b.bias.len() {
                return Err(NnError::Incongruent);
            }
            for (x, y) in a.values_mut().zip(b.values()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn clear(&mut self) {
        for v in self.values_mut() {
            *v = 0.0;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    /// Flat view in layer order: weights row-major then bias, per layer.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.values_mut())
    }
}

/// Anything made of dense layers in a fixed order.
pub trait Parameterized {
    fn layers(&self) -> Vec<&DenseLayer>;
    fn layers_mut(&mut self) -> Vec<&mut DenseLayer>;

    fn zero_grads(&self) -> Gradients {
        Gradients::zeros_for(&self.layers())
    }

    fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    /// Little-endian bytes of every parameter in layer order.
    fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.parameter_count() * 8);
        for layer in self.layers() {
            for v in layer.weight.data().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl Parameterized for DenseLayer {
    fn layers(&self) -> Vec<&DenseLayer> {
        vec![self]
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        vec![self]
    }
}

/// Mutable visit over a flat parameter index: `f(value)` for the `idx`-th
/// parameter in `values()` order.
pub(crate) fn parameter_mut<'a>(layers: Vec<&'a mut DenseLayer>, mut idx: usize) -> Option<&'a mut f64> {
    for layer in layers {
        let n_w = layer.weight.rows() * layer.weight.cols();
        if idx < n_w {
            return layer.weight.data_mut().get_mut(idx);
        }
        idx -= n_w;
        if idx < layer.bias.len() {
            return layer.bias.get_mut(idx);
        }
        idx -= layer.bias.len();
    }
    None
}
