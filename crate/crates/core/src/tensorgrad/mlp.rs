use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{CcdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Fully connected network. Layer `i` maps `layer_sizes[i]` to
/// `layer_sizes[i + 1]` via `x · W_i + b_i`, then its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    activations: Vec<Activation>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Weight and bias handles interleaved in [`Mlp::params`] order.
    pub fn params(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

impl Mlp {
    /// Zero-initialised network.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(CcdError::Config(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(CcdError::dim(
                "mlp activations",
                layer_sizes.len() - 1,
                activations.len(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(CcdError::Config("layer widths must be positive".into()));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Matrix::zeros(w[0], w[1]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Matrix::zeros(1, n)).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(layer_sizes, activations)?;
        for w in &mut mlp.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.gen_range(-limit..=limit);
            }
        }
        Ok(mlp)
    }

    /// Hidden layers use `hidden`; the output layer is linear.
    pub fn activations_for(
        n_layers: usize,
        hidden: impl Fn(usize) -> Activation,
    ) -> Vec<Activation> {
        (0..n_layers)
            .map(|i| {
                if i + 1 == n_layers {
                    Activation::Identity
                } else {
                    hidden(i)
                }
            })
            .collect()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Matrix {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.biases[layer]
    }

    /// Parameters as `[W0, b0, W1, b1, ...]`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }

    /// Batched forward pass without a tape. Rows of `input` are samples.
    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.input_dim() {
            return Err(CcdError::dim("mlp input", self.input_dim(), input.cols()));
        }
        let mut h = input.clone();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = h.matmul(w);
            let bias = b.row(0);
            for i in 0..z.rows() {
                for (v, &bj) in z.row_mut(i).iter_mut().zip(bias) {
                    *v += bj;
                }
            }
            if *act == Activation::Tanh {
                z.data_mut().iter_mut().for_each(|v| *v = v.tanh());
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(input))?.into_vec())
    }

    /// Records this network's parameters as tape leaves.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let weights = self.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let biases = self.biases.iter().map(|b| tape.leaf(b.clone())).collect();
        MlpVars { weights, biases }
    }

    /// Forward pass recorded on `tape`; numerically identical to
    /// [`Mlp::forward_batch`].
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        let cols = tape.value(input).cols();
        if cols != self.input_dim() {
            return Err(CcdError::dim("mlp input", self.input_dim(), cols));
        }
        let mut h = input;
        for ((&w, &b), act) in vars.weights.iter().zip(&vars.biases).zip(&self.activations) {
            let z = tape.matmul(h, w);
            let z = tape.add(z, b);
            h = match act {
                Activation::Tanh => tape.tanh(z),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }
}
