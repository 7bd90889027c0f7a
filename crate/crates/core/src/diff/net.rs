use alloc::vec::Vec;

use rand::Rng;

use super::{DiffError, Real};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }

    /// Value and derivative at `x`, computed exactly as [`Activation::apply`].
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = math::tanh(x);
                (t, 1.0 - t * t)
            }
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Identity => (x, 1.0),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Fully connected feed-forward network over a flat parameter vector.
///
/// Each layer owns a contiguous block `[W (outputs × inputs, row-major) | b]` of
/// `params`, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl DenseNet {
    /// Zero-initialized network from explicit layer shapes.
    pub fn from_layers(layers: Vec<LayerShape>) -> Result<Self, DiffError> {
        if layers.is_empty() {
            return Err(DiffError::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(DiffError::DimensionMismatch {
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        let count = layers.iter().map(LayerShape::param_count).sum();
        Ok(Self { layers, params: alloc::vec![0.0; count] })
    }

    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self, DiffError> {
        if sizes.len() < 2 {
            return Err(DiffError::EmptyNetwork);
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerShape {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { output } else { hidden },
            })
            .collect();
        Self::from_layers(layers)
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut offset = 0;
        for layer in &self.layers {
            let bound = 1.0 / math::sqrt(layer.inputs as f64);
            for p in &mut self.params[offset..offset + layer.param_count()] {
                *p = rng.random_range(-bound..bound);
            }
            offset += layer.param_count();
        }
    }

    /// Multiply the last layer's parameters by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.layers.last().map_or(0, LayerShape::param_count);
        let len = self.params.len();
        for p in &mut self.params[len - n..] {
            *p *= factor;
        }
    }

    /// Biases of the last layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.output_dim();
        let len = self.params.len();
        &mut self.params[len - n..]
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), DiffError> {
        if params.len() != self.params.len() {
            return Err(DiffError::DimensionMismatch { expected: self.params.len(), found: params.len() });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Forward pass with explicit (possibly recorded) parameters.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Result<Vec<T>, DiffError> {
        if params.len() != self.params.len() {
            return Err(DiffError::DimensionMismatch { expected: self.params.len(), found: params.len() });
        }
        self.check_input(input.len())?;
        let mut current: Vec<T> = input.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            let (weights, rest) = params[offset..].split_at(layer.inputs * layer.outputs);
            let biases = &rest[..layer.outputs];
            current = T::dense(weights, biases, &current, layer.activation);
            offset += layer.param_count();
        }
        Ok(current)
    }

    /// Forward pass with the stored parameters held constant; only the input
    /// may carry gradient.
    pub fn forward_frozen<T: Real>(&self, input: &[T]) -> Result<Vec<T>, DiffError> {
        self.check_input(input.len())?;
        let mut current: Vec<T> = input.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            let (weights, rest) = self.params[offset..].split_at(layer.inputs * layer.outputs);
            let biases = &rest[..layer.outputs];
            current = T::dense_frozen(weights, biases, &current, layer.activation);
            offset += layer.param_count();
        }
        Ok(current)
    }

    /// Plain evaluation.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>, DiffError> {
        self.forward_frozen(input)
    }

    fn check_input(&self, len: usize) -> Result<(), DiffError> {
        if len != self.input_dim() {
            return Err(DiffError::DimensionMismatch { expected: self.input_dim(), found: len });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;
    use alloc::vec;

    #[test]
    fn parameter_count_formula() {
        let net = DenseNet::mlp(&[3, 5, 4, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.param_count(), (3 * 5 + 5) + (5 * 4 + 4) + (4 * 2 + 2));
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let mut net = DenseNet::mlp(&[2, 3], Activation::Tanh, Activation::Tanh).unwrap();
        // weights stay 0, biases set
        net.params_mut()[6..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let out = net.eval(&[7.0, -3.0]).unwrap();
        let expected: Vec<f64> = [0.5, -1.0, 2.0].iter().map(|&b| math::tanh(b)).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn single_relu_unit() {
        let mut net = DenseNet::mlp(&[1, 1], Activation::Relu, Activation::Relu).unwrap();
        net.set_params(&[2.0, 1.0]).unwrap();
        assert_eq!(net.eval(&[3.0]).unwrap(), vec![7.0]);
        assert_eq!(net.eval(&[-3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut net = DenseNet::mlp(&[3, 3], Activation::Identity, Activation::Identity).unwrap();
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        assert_eq!(net.eval(&[0.1, -2.0, 5.5]).unwrap(), vec![0.1, -2.0, 5.5]);
    }

    #[test]
    fn dimension_mismatch_is_a_configuration_error() {
        let net = DenseNet::mlp(&[2, 4, 1], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.eval(&[1.0]),
            Err(DiffError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn recorded_and_plain_forward_agree_bitwise() {
        let mut net = DenseNet::mlp(&[3, 6, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut rng = crate::rng::Streams::new(7).stream(crate::rng::Stream::Init);
        net.init_uniform(&mut rng);
        let input = [0.3, -0.8, 1.7];
        let tape = Tape::new();
        let pv = tape.vars(net.params());
        let iv = tape.vars(&input);
        let recorded: Vec<f64> = net.forward(&pv, &iv).unwrap().iter().map(|v| v.value()).collect();
        let frozen: Vec<f64> = net.forward_frozen(&iv).unwrap().iter().map(|v| v.value()).collect();
        let plain = net.eval(&input).unwrap();
        assert_eq!(recorded, plain);
        assert_eq!(frozen, plain);
    }
}
