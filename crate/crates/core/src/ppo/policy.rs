use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DesignParams;
use crate::envsim::{gaussian_log_prob, PolicyEval, PolicyHeads};
use crate::error::{CcdError, Result};
use crate::tensorgrad::{softplus, Activation, Mlp, MlpDocument, MlpVars, Matrix, Tape, Var};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Which hidden layers use `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    /// Only the first hidden layer; the rest are linear.
    First,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: HiddenActivation,
}

impl NetworkSpec {
    pub fn illustrative() -> Self {
        Self {
            hidden: vec![32, 32, 16, 16],
            activation: HiddenActivation::First,
        }
    }

    pub fn suspension() -> Self {
        Self {
            hidden: vec![16, 32, 32, 16],
            activation: HiddenActivation::All,
        }
    }

    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    pub fn activations(&self) -> Vec<Activation> {
        let first_only = self.activation == HiddenActivation::First;
        Mlp::activations_for(self.hidden.len() + 1, |i| {
            if i == 0 || !first_only {
                Activation::Tanh
            } else {
                Activation::Identity
            }
        })
    }
}

/// Fixed input normalization shared by every network over `(x, p)`:
/// states divided by a per-dimension scale, design mapped from its bounds
/// to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureScaling {
    pub state_scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Self {
        Self {
            state_scale: lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l.abs().max(u.abs()).max(1e-12))
                .collect(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_scale.len()
    }

    pub fn scaled_states(&self, states: &Matrix) -> Matrix {
        let d = self.state_dim();
        let mut out = states.clone();
        for i in 0..out.rows() {
            for (v, s) in out.row_mut(i).iter_mut().zip(&self.state_scale[..d]) {
                *v /= s;
            }
        }
        out
    }

    /// Design feature `2 p̂ - 1` from normalized coordinates `p̂ ∈ [0, 1]`.
    pub fn design_feature(normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|z| z * 2.0 + -1.0).collect()
    }

    pub fn features(&self, states: &Matrix, normalized_design: &[f64]) -> Result<Matrix> {
        if states.cols() != self.state_dim() {
            return Err(CcdError::dim("policy state", self.state_dim(), states.cols()));
        }
        let xs = self.scaled_states(states);
        let pf = Self::design_feature(normalized_design);
        let mut rep = Vec::with_capacity(states.rows() * pf.len());
        for _ in 0..states.rows() {
            rep.extend_from_slice(&pf);
        }
        let pm = Matrix::from_vec(states.rows(), pf.len(), rep);
        Ok(Matrix::hcat(&[&xs, &pm]))
    }

    /// Same features on a tape, with the normalized design as a node so
    /// gradients reach it.
    pub fn features_tape(&self, tape: &mut Tape, states: &Matrix, design_leaf: Var) -> Var {
        let xs = tape.leaf(self.scaled_states(states));
        let p2 = tape.scale(design_leaf, 2.0);
        let pf = tape.add_scalar(p2, -1.0);
        let rep = tape.repeat_rows(pf, states.rows());
        tape.hcat(&[xs, rep])
    }
}

/// Gaussian policy over `(x, p)`: separate mean and standard-deviation
/// networks. `std = std_scale · softplus(std_net) + min_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub std_net: Mlp,
    pub scaling: FeatureScaling,
    pub action_scale: f64,
    pub std_scale: f64,
    pub min_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
    pub scaling: FeatureScaling,
    pub value_scale: f64,
}

/// Tape handles for one policy/value pass.
#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub mean: MlpVars,
    pub std: MlpVars,
}

impl GaussianPolicy {
    /// Glorot mean network, std network with zero weights and the given
    /// constant bias.
    pub fn new<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        scaling: FeatureScaling,
        design_dim: usize,
        action_scale: f64,
        std_scale: f64,
        std_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let input = scaling.state_dim() + design_dim;
        let sizes = spec.layer_sizes(input);
        let acts = spec.activations();
        let mean_net = Mlp::glorot(&sizes, &acts, rng)?;
        let mut std_net = Mlp::zeros(&sizes, &acts)?;
        for l in 0..std_net.n_layers() {
            std_net
                .bias_mut(l)
                .data_mut()
                .iter_mut()
                .for_each(|b| *b = std_bias);
        }
        Ok(Self {
            mean_net,
            std_net,
            scaling,
            action_scale,
            std_scale,
            min_std: 1e-6,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    /// `(mean, std)` per row of `states`.
    pub fn distribution(&self, states: &Matrix, normalized_design: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = self.scaling.features(states, normalized_design)?;
        let mean = self
            .mean_net
            .forward_batch(&f)?
            .into_vec()
            .into_iter()
            .map(|m| m * self.action_scale)
            .collect();
        let std = self
            .std_net
            .forward_batch(&f)?
            .into_vec()
            .into_iter()
            .map(|s| softplus(s) * self.std_scale + self.min_std)
            .collect();
        Ok((mean, std))
    }

    pub fn log_prob_batch(&self, states: &Matrix, normalized_design: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let (mean, std) = self.distribution(states, normalized_design)?;
        Ok(actions
            .iter()
            .zip(mean.iter().zip(&std))
            .map(|(&u, (&m, &s))| gaussian_log_prob(u, m, s))
            .collect())
    }

    pub fn register(&self, tape: &mut Tape) -> PolicyVars {
        PolicyVars {
            mean: self.mean_net.register(tape),
            std: self.std_net.register(tape),
        }
    }

    /// `(mean, std)` nodes (`n x 1`) from a feature node.
    pub fn distribution_tape(&self, tape: &mut Tape, vars: &PolicyVars, features: Var) -> Result<(Var, Var)> {
        let m = self.mean_net.forward_tape(tape, &vars.mean, features)?;
        let mean = tape.scale(m, self.action_scale);
        let s = self.std_net.forward_tape(tape, &vars.std, features)?;
        let s = tape.softplus(s);
        let s = tape.scale(s, self.std_scale);
        let std = tape.add_scalar(s, self.min_std);
        Ok((mean, std))
    }

    /// Gaussian log-density node of `actions` (`n x 1`).
    pub fn log_prob_tape(tape: &mut Tape, mean: Var, std: Var, actions: Var) -> Var {
        let d = tape.sub(actions, mean);
        let z = tape.div(d, std);
        let z2 = tape.square(z);
        let a = tape.scale(z2, -0.5);
        let ls = tape.log(std);
        let b = tape.sub(a, ls);
        tape.add_scalar(b, -LN_SQRT_2PI)
    }

    pub fn all_finite(&self) -> bool {
        self.mean_net.all_finite() && self.std_net.all_finite()
    }
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        scaling: FeatureScaling,
        design_dim: usize,
        value_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let input = scaling.state_dim() + design_dim;
        Ok(Self {
            net: Mlp::glorot(&spec.layer_sizes(input), &spec.activations(), rng)?,
            scaling,
            value_scale,
        })
    }

    pub fn values(&self, states: &Matrix, normalized_design: &[f64]) -> Result<Vec<f64>> {
        let f = self.scaling.features(states, normalized_design)?;
        Ok(self
            .net
            .forward_batch(&f)?
            .into_vec()
            .into_iter()
            .map(|v| v * self.value_scale)
            .collect())
    }

    pub fn values_tape(&self, tape: &mut Tape, vars: &MlpVars, features: Var) -> Result<Var> {
        let v = self.net.forward_tape(tape, vars, features)?;
        Ok(tape.scale(v, self.value_scale))
    }
}

/// Policy plus value network: the full agent snapshot handed to rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value: ValueNet,
}

impl PolicyEval for Agent {
    fn heads(&self, states: &Matrix, design: &DesignParams) -> Result<PolicyHeads> {
        let z = design.normalized();
        let (mean, std) = self.policy.distribution(states, &z)?;
        let value = self.value.values(states, &z)?;
        Ok(PolicyHeads { mean, std, value })
    }
}

/// On-disk form of an [`Agent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDocument {
    pub format: String,
    pub version: u32,
    pub state_scale: Vec<f64>,
    pub action_scale: f64,
    pub std_scale: f64,
    pub min_std: f64,
    pub value_scale: f64,
    pub mean_net: MlpDocument,
    pub std_net: MlpDocument,
    pub value_net: MlpDocument,
}

pub const AGENT_FORMAT: &str = "ccdtwin-agent";

impl Agent {
    pub fn to_document(&self) -> AgentDocument {
        AgentDocument {
            format: AGENT_FORMAT.into(),
            version: 1,
            state_scale: self.policy.scaling.state_scale.clone(),
            action_scale: self.policy.action_scale,
            std_scale: self.policy.std_scale,
            min_std: self.policy.min_std,
            value_scale: self.value.value_scale,
            mean_net: (&self.policy.mean_net).into(),
            std_net: (&self.policy.std_net).into(),
            value_net: (&self.value.net).into(),
        }
    }

    pub fn from_document(doc: AgentDocument) -> Result<Self> {
        if doc.format != AGENT_FORMAT || doc.version != 1 {
            return Err(CcdError::Parse(format!(
                "unsupported agent document {} v{}",
                doc.format, doc.version
            )));
        }
        let scaling = FeatureScaling {
            state_scale: doc.state_scale,
        };
        Ok(Self {
            policy: GaussianPolicy {
                mean_net: doc.mean_net.try_into()?,
                std_net: doc.std_net.try_into()?,
                scaling: scaling.clone(),
                action_scale: doc.action_scale,
                std_scale: doc.std_scale,
                min_std: doc.min_std,
            },
            value: ValueNet {
                net: doc.value_net.try_into()?,
                scaling,
                value_scale: doc.value_scale,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("agent serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
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
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent() -> Agent {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scaling = FeatureScaling::from_bounds(&[-10.0, -5.0], &[5.0, 2.0]);
        let spec = NetworkSpec::illustrative();
        Agent {
            policy: GaussianPolicy::new(&spec, scaling.clone(), 1, 1.0, 0.15, 0.01, &mut rng).unwrap(),
            value: ValueNet::new(&spec, scaling, 1, 10.0, &mut rng).unwrap(),
        }
    }

    #[test]
    fn std_branch_is_constant_and_positive() {
        let a = agent();
        let states = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]]);
        let (_, std) = a.policy.distribution(&states, &[0.3]).unwrap();
        assert!(std.iter().all(|&s| s > 0.0 && s == std[0]));
    }

    #[test]
    fn tape_matches_plain_bitwise() {
        let a = agent();
        let states = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![4.0, -1.0]]);
        let actions = [0.2, -0.7, 1.3];
        let z = [0.41];
        let plain = a.policy.log_prob_batch(&states, &z, &actions).unwrap();
        let mut tape = Tape::new();
        let vars = a.policy.register(&mut tape);
        let p = tape.leaf(Matrix::row_vector(&z));
        let f = a.policy.scaling.features_tape(&mut tape, &states, p);
        let (m, s) = a.policy.distribution_tape(&mut tape, &vars, f).unwrap();
        let u = tape.leaf(Matrix::column_vector(&actions));
        let lp = GaussianPolicy::log_prob_tape(&mut tape, m, s, u);
        assert_eq!(tape.value(lp).data(), plain.as_slice());
    }

    #[test]
    fn document_round_trip() {
        let a = agent();
        let back = Agent::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
    }
}
