use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Elementwise (or row-wise, for softmax) layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu { slope: 0.01 };

    fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match *self {
            Activation::LeakyRelu { slope } => z.mapv(|v| if v > 0.0 { v } else { slope * v }),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Identity => z.clone(),
            Activation::Softmax => softmax_rows(z.view()),
        }
    }

    /// Map dL/d(output) to dL/d(pre-activation).
    fn backprop(&self, z: &Array2<f64>, y: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
        match *self {
            Activation::LeakyRelu { slope } => {
                let mut out = grad.clone();
                Zip::from(&mut out).and(z).for_each(|g, &zv| {
                    if zv <= 0.0 {
                        *g *= slope
                    }
                });
                out
            }
            Activation::Tanh => {
                let mut out = grad.clone();
                Zip::from(&mut out).and(y).for_each(|g, &yv| *g *= 1.0 - yv * yv);
                out
            }
            Activation::Identity => grad.clone(),
            Activation::Softmax => {
                // J^T g = y * (g - <g, y>) per row.
                let mut out = grad.clone();
                for (mut o, yr) in out.rows_mut().into_iter().zip(y.rows()) {
                    let dot = o.dot(&yr);
                    Zip::from(&mut o).and(&yr).for_each(|g, &yv| *g = yv * (*g - dot));
                }
                out
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, output width last.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::invalid("mlp spec", "need at least an input and an output width"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("mlp spec", "layer widths must be positive"));
        }
        if self.hidden_activation == Activation::Softmax && self.layer_widths.len() > 2 {
            return Err(Error::invalid("mlp spec", "softmax is only allowed on the output layer"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// One fully connected layer, `y = x W^T + b`. Also used as the container for
/// that layer's gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Dense {
        Dense {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub(crate) fn same_shape(&self, other: &Dense) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.dim() == other.bias.dim()
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input to each layer (`inputs[0]` is the batch).
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

impl Mlp {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new(spec: MlpSpec) -> Result<Mlp> {
        spec.validate()?;
        let mut rng = rng_from(spec.seed, &[]);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Mlp> {
        spec.validate()?;
        if layers.len() != spec.layer_widths.len() - 1 {
            return Err(Error::shape("mlp layers", &[spec.layer_widths.len() - 1], &[layers.len()]));
        }
        for (layer, w) in layers.iter().zip(spec.layer_widths.windows(2)) {
            if layer.weights.dim() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(Error::shape(
                    "mlp layer",
                    &[w[1], w[0]],
                    &[layer.weights.nrows(), layer.weights.ncols()],
                ));
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("mlp input", &[x.nrows(), self.input_dim()], &[x.nrows(), x.ncols()]));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weights.t()) + &layer.bias;
            let y = self.activation(l).apply(&z);
            inputs.push(current);
            preacts.push(z);
            current = y;
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp activations"));
        }
        Ok(MlpTrace {
            inputs,
            preacts,
            output: current,
        })
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut current = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weights.t()) + &layer.bias;
            current = self.activation(l).apply(&z);
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mlp activations"));
        }
        Ok(current)
    }

    /// Backpropagate `dL/d(output)` through a cached pass. Returns per-layer
    /// parameter gradients and `dL/d(input)`.
    pub fn backward(&self, trace: &MlpTrace, grad_output: &Array2<f64>) -> Result<(Vec<Dense>, Array2<f64>)> {
        if grad_output.dim() != trace.output.dim() {
            let (r, c) = trace.output.dim();
            return Err(Error::shape("mlp output gradient", &[r, c], &[grad_output.nrows(), grad_output.ncols()]));
        }
        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        let mut grad = grad_output.clone();
        for l in (0..self.layers.len()).rev() {
            let y = if l + 1 == self.layers.len() {
                &trace.output
            } else {
                &trace.inputs[l + 1]
            };
            let delta = self.activation(l).backprop(&trace.preacts[l], y, &grad);
            grads[l].weights = delta.t().dot(&trace.inputs[l]);
            grads[l].bias = delta.sum_axis(Axis(0));
            grad = delta.dot(&self.layers[l].weights);
        }
        Ok((grads, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(widths: &[usize], out: Activation) -> MlpSpec {
        MlpSpec {
            layer_widths: widths.to_vec(),
            hidden_activation: Activation::LEAKY_RELU,
            output_activation: out,
            seed: 3,
        }
    }

    #[test]
    fn softmax_hidden_layer_rejected() {
        let mut s = spec(&[3, 4, 2], Activation::Identity);
        s.hidden_activation = Activation::Softmax;
        assert!(Mlp::new(s).is_err());
        assert!(Mlp::new(spec(&[3], Activation::Identity)).is_err());
    }

    #[test]
    fn identity_layer_matches_affine_oracle() {
        let w = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let b = array![0.25, -1.0];
        let mlp = Mlp::from_layers(
            spec(&[3, 2], Activation::Identity),
            vec![Dense {
                weights: w.clone(),
                bias: b.clone(),
            }],
        )
        .unwrap();
        let x = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]];
        let out = mlp.predict(x.view()).unwrap();
        for i in 0..2 {
            for o in 0..2 {
                let mut acc = b[o];
                for k in 0..3 {
                    acc += x[[i, k]] * w[[o, k]];
                }
                assert_eq!(out[[i, o]], acc);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance_and_known_values() {
        let p = softmax_rows(array![[0.0, 0.0, 0.0], [1.0f64.ln(), 3.0f64.ln(), f64::NEG_INFINITY]].view());
        for v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((p[[1, 0]] - 0.25).abs() < 1e-15);
        assert!((p[[1, 1]] - 0.75).abs() < 1e-15);

        let a = softmax_rows(array![[1.0, 2.0, -3.0]].view());
        let b = softmax_rows(array![[1001.0, 1002.0, 997.0]].view());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
