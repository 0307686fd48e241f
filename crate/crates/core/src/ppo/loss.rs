use crate::envsim::{RewardSpec, TransitionBatch};
use crate::error::{CcdError, Result};
use crate::tensorgrad::{Gradients, Matrix, MlpVars, Tape, Var};

use super::policy::{Agent, GaussianPolicy, PolicyVars};

/// Per-transition clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Smooth L1 (Huber with unit threshold).
pub fn smooth_l1(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d < 1.0 {
        0.5 * d * d
    } else {
        d - 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub value_coef: f64,
    /// Weight of the reward-through-dynamics term; 0 disables it.
    pub pathwise_coef: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            value_coef: 0.5,
            pathwise_coef: 0.0,
        }
    }
}

/// Sensitivities of one-step dynamics to the normalized design, used by the
/// optional pathwise term: `dx'/dp̂_i` for each transition.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseData {
    /// One `rows x n` matrix per design parameter.
    pub sensitivities: Vec<Matrix>,
    pub reward: RewardSpec,
    /// Normalized design the batch was collected at.
    pub design_at_collection: Vec<f64>,
}

impl PathwiseData {
    /// From per-parameter `(dA/dp, dB/dp)` and parameter widths.
    pub fn new(batch: &TransitionBatch, jacobian: &[(Matrix, Matrix)], widths: &[f64], reward: RewardSpec, design_norm: Vec<f64>) -> Self {
        let n = batch.states.cols();
        let sensitivities = jacobian
            .iter()
            .zip(widths)
            .map(|((da, db), w)| {
                let mut s = batch.states.matmul_bt(da);
                for i in 0..batch.len() {
                    let u = batch.actions[i];
                    for j in 0..n {
                        s[(i, j)] = (s[(i, j)] + db[(j, 0)] * u) * w;
                    }
                }
                s
            })
            .collect();
        Self {
            sensitivities,
            reward,
            design_at_collection: design_norm,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            sensitivities: self.sensitivities.iter().map(|s| s.select_rows(idx)).collect(),
            reward: self.reward.clone(),
            design_at_collection: self.design_at_collection.clone(),
        }
    }
}

/// Handles to the graph of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub loss: Var,
    pub policy: PolicyVars,
    pub value: MlpVars,
    pub design: Var,
    pub policy_term: f64,
    pub value_term: f64,
    pub pathwise_term: f64,
    /// Transitions removed because their ratio was not finite.
    pub dropped: usize,
}

impl LossGraph {
    /// Gradients in the order of `Agent` parameters followed by the design.
    pub fn gradients(&self, grads: &Gradients) -> (Vec<Matrix>, Matrix) {
        let mut g = Vec::new();
        for v in self
            .policy
            .mean
            .params()
            .into_iter()
            .chain(self.policy.std.params())
            .chain(self.value.params())
        {
            g.push(grads.wrt(v));
        }
        (g, grads.wrt(self.design))
    }
}

/// Records the PPO loss for `batch` at normalized design `design_norm`.
///
/// `loss = mean[-min(ρA, clip(ρ)A)] + c_v · mean[SmoothL1(V/s, V̂/s)]`,
/// with the value error measured in units of the value scale `s`.
pub fn ppo_loss(
    tape: &mut Tape,
    agent: &Agent,
    batch: &TransitionBatch,
    design_norm: &[f64],
    cfg: &LossConfig,
    pathwise: Option<&PathwiseData>,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(CcdError::Config("empty minibatch".into()));
    }
    // Drop transitions whose ratio is not finite before building the graph.
    let lp = agent
        .policy
        .log_prob_batch(&batch.states, design_norm, &batch.raw_actions)?;
    let keep: Vec<usize> = (0..batch.len())
        .filter(|&i| (lp[i] - batch.log_probs_old[i]).exp().is_finite())
        .collect();
    let dropped = batch.len() - keep.len();
    let owned;
    let (b, path) = if dropped > 0 {
        log::debug!("dropping {dropped} transitions with non-finite ratio");
        owned = (batch.select(&keep), pathwise.map(|p| p.select(&keep)));
        (&owned.0, owned.1.as_ref())
    } else {
        (batch, pathwise)
    };

    let policy = agent.policy.register(tape);
    let value = agent.value.net.register(tape);
    let design = tape.leaf(Matrix::row_vector(design_norm));
    if b.is_empty() {
        let loss = tape.constant_scalar(0.0);
        return Ok(LossGraph {
            loss,
            policy,
            value,
            design,
            policy_term: 0.0,
            value_term: 0.0,
            pathwise_term: 0.0,
            dropped,
        });
    }

    let f = agent.policy.scaling.features_tape(tape, &b.states, design);
    let (mean, std) = agent.policy.distribution_tape(tape, &policy, f)?;
    let u = tape.leaf(Matrix::column_vector(&b.raw_actions));
    let lp_new = GaussianPolicy::log_prob_tape(tape, mean, std, u);
    let lp_old = tape.leaf(Matrix::column_vector(&b.log_probs_old));
    let diff = tape.sub(lp_new, lp_old);
    let ratio = tape.exp(diff);
    let adv = tape.leaf(Matrix::column_vector(&b.advantages));
    let s1 = tape.mul(ratio, adv);
    let rc = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let s2 = tape.mul(rc, adv);
    let surr = tape.min(s1, s2);
    let surr_mean = tape.mean(surr);
    let policy_loss = tape.neg(surr_mean);

    let v_raw = agent.value.net.forward_tape(tape, &value, f)?;
    let targets: Vec<f64> = b.returns.iter().map(|r| r / agent.value.value_scale).collect();
    let target = tape.leaf(Matrix::column_vector(&targets));
    let d = tape.sub(v_raw, target);
    let ad = tape.abs(d);
    let one = tape.constant_scalar(1.0);
    let m = tape.min(ad, one);
    let m2 = tape.square(m);
    let quad = tape.scale(m2, 0.5);
    let lin = tape.sub(ad, m);
    let huber = tape.add(quad, lin);
    let value_loss = tape.mean(huber);
    let weighted = tape.scale(value_loss, cfg.value_coef);
    let mut loss = tape.add(policy_loss, weighted);

    let mut pathwise_term = 0.0;
    if let (Some(pw), true) = (path, cfg.pathwise_coef != 0.0) {
        // Linearized next state x'(p̂) = x'_obs + Σ_i S_i (p̂_i - p̂_i⁰).
        let z0 = tape.leaf(Matrix::row_vector(&pw.design_at_collection));
        let delta = tape.sub(design, z0);
        let mut x_next = tape.leaf(b.next_states.clone());
        for (i, s) in pw.sensitivities.iter().enumerate() {
            let di = tape.columns(delta, i, 1);
            let si = tape.leaf(s.clone());
            let shift = tape.mul(si, di);
            x_next = tape.add(x_next, shift);
        }
        let q = tape.leaf(Matrix::row_vector(&pw.reward.q_diag));
        let x2 = tape.square(x_next);
        let weighted_x = tape.mul(x2, q);
        let cost = tape.sum_cols(weighted_x);
        let mean_cost = tape.mean(cost);
        pathwise_term = tape.scalar(mean_cost);
        let scaled = tape.scale(mean_cost, cfg.pathwise_coef / agent.value.value_scale);
        loss = tape.add(loss, scaled);
    }

    Ok(LossGraph {
        loss,
        policy_term: tape.scalar(policy_loss),
        value_term: tape.scalar(value_loss),
        pathwise_term,
        policy,
        value,
        design,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_cases() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, -0.7, 0.2), -0.7);
        assert!((smooth_l1(0.5, 0.0) - 0.125).abs() < 1e-12);
        assert!((smooth_l1(2.0, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn surrogate_bound_split_form() {
        for i in 0..200 {
            let rho = 0.01 + i as f64 * 0.02;
            for adv in [-2.0, -0.3, 0.0, 0.4, 3.0] {
                let c = clipped_surrogate(rho, adv, 0.2);
                if adv >= 0.0 {
                    assert!(c <= rho * adv);
                }
                if adv <= 0.0 {
                    assert!(c <= rho.clamp(0.8, 1.2) * adv);
                }
            }
        }
    }
}
