//! Structured-text checkpoint for [`Mlp`].
//!
//! Floats are written in shortest round-trip decimal form, so save → load →
//! save reproduces both the values and the text exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Activation, Mlp};
use crate::error::{CcdError, Result};

pub const MLP_FORMAT: &str = "ccdtwin-mlp";
pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDocument {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Row-major `(in, out)` weight arrays, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&Mlp> for MlpDocument {
    fn from(mlp: &Mlp) -> Self {
        Self {
            format: MLP_FORMAT.to_string(),
            version: MLP_FORMAT_VERSION,
            layer_sizes: mlp.layer_sizes().to_vec(),
            activations: mlp.activations().to_vec(),
            weights: (0..mlp.n_layers())
                .map(|i| mlp.weight(i).data().to_vec())
                .collect(),
            biases: (0..mlp.n_layers())
                .map(|i| mlp.bias(i).data().to_vec())
                .collect(),
        }
    }
}

impl TryFrom<MlpDocument> for Mlp {
    type Error = CcdError;

    fn try_from(doc: MlpDocument) -> Result<Self> {
        if doc.format != MLP_FORMAT || doc.version != MLP_FORMAT_VERSION {
            return Err(CcdError::Parse(format!(
                "unsupported checkpoint format {} v{}",
                doc.format, doc.version
            )));
        }
        let mut mlp = Mlp::zeros(&doc.layer_sizes, &doc.activations)?;
        if doc.weights.len() != mlp.n_layers() || doc.biases.len() != mlp.n_layers() {
            return Err(CcdError::Parse("layer count does not match layer_sizes".into()));
        }
        for (i, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
            let (r, c) = mlp.weight(i).shape();
            if w.len() != r * c || b.len() != c {
                return Err(CcdError::Parse(format!("layer {i} has wrong parameter count")));
            }
            *mlp.weight_mut(i) = Matrix::from_vec(r, c, w);
            *mlp.bias_mut(i) = Matrix::from_vec(1, c, b);
        }
        Ok(mlp)
    }
}

impl Mlp {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MlpDocument::from(self)).expect("mlp serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MlpDocument = serde_json::from_str(text)?;
        Mlp::try_from(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CcdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcdError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn save_load_is_bit_exact(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let acts = Mlp::activations_for(3, |_| Activation::Tanh);
            let mlp = Mlp::glorot(&[4, 5, 3, 2], &acts, &mut rng).unwrap();
            let text = mlp.to_json();
            let back = Mlp::from_json(&text).unwrap();
            prop_assert_eq!(&back, &mlp);
            prop_assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let mlp = Mlp::zeros(&[2, 1], &[Activation::Identity]).unwrap();
        let mut doc = MlpDocument::from(&mlp);
        doc.weights[0].push(1.0);
        assert!(Mlp::try_from(doc).is_err());
    }
}
