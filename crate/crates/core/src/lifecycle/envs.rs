use rand_chacha::ChaCha8Rng;

use crate::discrepancy::QuantileModel;
use crate::dynamics::{DesignParams, DiscretePlant};
use crate::envsim::{
    blown, EnvCursor, Environment, IllustrativeTruthEnv, RewardSpec, StepResult, SuspensionTruthEnv,
};
use crate::error::{CcdError, Result};

/// Nominal model corrected by a learned discrepancy:
/// `x' = A x + B u + e_median(e, x, u)`.
///
/// The running error `e` lives in the cursor's hidden state and is never
/// shown to the policy. When the reward carries a quantile penalty, the
/// predicted band width `upper - lower` is charged at every step.
#[derive(Debug, Clone)]
pub struct CorrectedEnv {
    pub plant: DiscretePlant,
    pub model: QuantileModel,
    pub reward: RewardSpec,
    pub action_bounds: (f64, f64),
    pub blowup_bound: f64,
}

impl CorrectedEnv {
    pub fn new(
        plant: DiscretePlant,
        model: QuantileModel,
        reward: RewardSpec,
        action_bounds: (f64, f64),
        blowup_bound: f64,
    ) -> Result<Self> {
        if model.state_dim != plant.state_dim() {
            return Err(CcdError::dim("discrepancy model state", plant.state_dim(), model.state_dim));
        }
        if reward.state_dim() != plant.state_dim() {
            return Err(CcdError::dim("reward state", plant.state_dim(), reward.state_dim()));
        }
        Ok(Self {
            plant,
            model,
            reward,
            action_bounds,
            blowup_bound,
        })
    }
}

impl Environment for CorrectedEnv {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    fn design(&self) -> &DesignParams {
        &self.plant.design
    }

    fn action_bounds(&self) -> (f64, f64) {
        self.action_bounds
    }

    fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    fn nominal(&self) -> &DiscretePlant {
        &self.plant
    }

    fn begin(&self, x0: &[f64], _episode: u64) -> EnvCursor {
        EnvCursor {
            x: x0.to_vec(),
            hidden: vec![0.0; self.plant.state_dim()],
            t: 0,
            offset: 0,
        }
    }

    fn step(&self, cursor: &mut EnvCursor, u: f64, _rng: &mut ChaCha8Rng) -> Result<StepResult> {
        let q = self.model.predict(&cursor.hidden, &cursor.x, u)?;
        let x_next = self.plant.step_unchecked(&cursor.x, &[u], &q.median);
        let width = q.width();
        let reward = self
            .reward
            .reward_unchecked(&x_next, u, self.reward.q_quantile_diag.as_ref().map(|_| width.as_slice()));
        cursor.x.clone_from(&x_next);
        cursor.hidden = q.median;
        cursor.t += 1;
        Ok(StepResult {
            terminated: blown(&x_next, self.blowup_bound),
            x_next,
            reward,
            exogenous: None,
        })
    }
}

/// The hidden physical system of either case study.
#[derive(Debug, Clone)]
pub enum TruthEnv {
    Illustrative(IllustrativeTruthEnv),
    Suspension(SuspensionTruthEnv),
}

impl TruthEnv {
    fn inner(&self) -> &dyn Environment {
        match self {
            TruthEnv::Illustrative(e) => e,
            TruthEnv::Suspension(e) => e,
        }
    }
}

impl Environment for TruthEnv {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }

    fn design(&self) -> &DesignParams {
        self.inner().design()
    }

    fn action_bounds(&self) -> (f64, f64) {
        self.inner().action_bounds()
    }

    fn reward_spec(&self) -> &RewardSpec {
        self.inner().reward_spec()
    }

    fn nominal(&self) -> &DiscretePlant {
        self.inner().nominal()
    }

    fn begin(&self, x0: &[f64], episode: u64) -> EnvCursor {
        self.inner().begin(x0, episode)
    }

    fn step(&self, cursor: &mut EnvCursor, u: f64, rng: &mut ChaCha8Rng) -> Result<StepResult> {
        self.inner().step(cursor, u, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::IllustrativeConfig;
    use crate::envsim::{NominalDisturbance, NominalEnv};
    use crate::tensorgrad::Matrix;
    use rand::{Rng, SeedableRng};

    fn zero_model(n: usize) -> QuantileModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = QuantileModel::new(n, &[8], &mut rng).unwrap();
        for p in m.net.params_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        m
    }

    #[test]
    fn zero_model_matches_noise_free_nominal() {
        let cfg = IllustrativeConfig::default();
        let plant = cfg.discrete(&cfg.design().unwrap()).unwrap();
        let reward = RewardSpec::illustrative().with_quantile_penalty(0.1);
        let corrected = CorrectedEnv::new(plant.clone(), zero_model(2), reward, (-1.0, 1.0), 1e6).unwrap();
        let nominal = NominalEnv {
            plant,
            reward: RewardSpec::illustrative(),
            disturbance: NominalDisturbance::None,
            action_bounds: (-1.0, 1.0),
            blowup_bound: 1e6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut a, mut b) = (corrected.begin(&[1.0, -0.5], 0), nominal.begin(&[1.0, -0.5], 0));
        for _ in 0..50 {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let ra = corrected.step(&mut a, u, &mut rng).unwrap();
            let rb = nominal.step(&mut b, u, &mut rng).unwrap();
            assert_eq!(ra.x_next, rb.x_next);
            // Collapsed band: no penalty.
            assert_eq!(ra.reward, rb.reward);
        }
    }

    #[test]
    fn constant_median_shifts_state_and_feeds_back() {
        let cfg = IllustrativeConfig::default();
        let plant = cfg.discrete(&cfg.design().unwrap()).unwrap();
        let mut model = zero_model(2);
        // Output bias: lower -0.1, median +0.2, upper +0.3 for both states.
        let last = model.net.n_layers() - 1;
        *model.net.bias_mut(last) = Matrix::row_vector(&[-0.1, -0.1, 0.2, 0.2, 0.3, 0.3]);
        let reward = RewardSpec::illustrative().with_quantile_penalty(0.1);
        let env = CorrectedEnv::new(plant.clone(), model, reward.clone(), (-1.0, 1.0), 1e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = env.begin(&[0.0, 0.0], 0);
        let r = env.step(&mut c, 0.0, &mut rng).unwrap();
        assert!((r.x_next[0] - 0.2).abs() < 1e-12 && (r.x_next[1] - 0.2).abs() < 1e-12);
        assert_eq!(c.hidden, vec![0.2, 0.2]);
        let want = reward.reward(&r.x_next, 0.0, Some(&[0.4, 0.4])).unwrap();
        assert!((r.reward - want).abs() < 1e-12);
    }
}
