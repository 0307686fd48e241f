use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::envs::{CorrectedEnv, TruthEnv};
use crate::config::{ExperimentConfig, StartsConfig};
use crate::discrepancy::QuantileModel;
use crate::dynamics::{DesignParams, PlantSpec};
use crate::envsim::{
    seed_for, IllustrativeTruthEnv, InitialStates, NominalDisturbance, NominalEnv, RewardSpec, SuspensionTruthEnv,
};
use crate::error::{CcdError, Result};
use crate::ppo::{Agent, FeatureScaling, GaussianPolicy, ValueNet};
use crate::pretrain::{feasible_states, value_scale_for, SampleTriplet};
use crate::profiles::{generate_road, generate_speed, read_road_csv, read_speed_csv, DisturbanceTrack};

pub(crate) const STREAM_SAMPLES: u64 = 0x5A;
pub(crate) const STREAM_AGENT: u64 = 0xA6;
pub(crate) const STREAM_PRETRAIN: u64 = 0x9E;
pub(crate) const STREAM_POOL: u64 = 0xF0;
pub(crate) const STREAM_ROAD: u64 = 0x40AD;
pub(crate) const STREAM_SPEED: u64 = 0x5EED;
pub(crate) const STREAM_CODESIGN: u64 = 0xC0;
pub(crate) const STREAM_DEPLOY: u64 = 0xD0;
pub(crate) const STREAM_FIT: u64 = 0xF1;
pub(crate) const STREAM_EVAL: u64 = 0xE0;
pub(crate) const STREAM_EVAL_STARTS: u64 = 0xE5;

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Everything derived from an [`ExperimentConfig`] that the steps share:
/// reward, start distribution and the truth plant's disturbance track.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub reward: RewardSpec,
    pub starts: InitialStates,
    track: Option<DisturbanceTrack>,
}

impl Scenario {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let reward = match &config.plant {
            PlantSpec::Illustrative(_) => RewardSpec::illustrative(),
            PlantSpec::Suspension(_) => RewardSpec::suspension(),
        };
        let (lower, upper) = config.plant.state_bounds();
        let starts = match config.starts {
            StartsConfig::Box => InitialStates::Box { lower, upper },
            StartsConfig::FeasiblePool { size, input_fraction } => {
                let design = config.plant.initial_design()?;
                InitialStates::Pool(feasible_states(
                    &config.plant,
                    &reward,
                    &config.pretrain.mpc,
                    &design,
                    input_fraction,
                    size,
                    seed_for(config.seed, STREAM_POOL, 0),
                    config.workers,
                )?)
            }
        };
        let track = match &config.plant {
            PlantSpec::Illustrative(_) => None,
            PlantSpec::Suspension(_) => {
                let road = match &config.profiles.road_csv {
                    Some(p) => read_road_csv(p)?,
                    None => generate_road(&config.road, seed_for(config.seed, STREAM_ROAD, 0))?,
                };
                let speed = match &config.profiles.speed_csv {
                    Some(p) => read_speed_csv(p)?,
                    None => generate_speed(&config.speed, seed_for(config.seed, STREAM_SPEED, 0))?,
                };
                Some(DisturbanceTrack::new(&road, &speed))
            }
        };
        Ok(Self {
            config: config.clone(),
            reward,
            starts,
            track,
        })
    }

    pub fn plant(&self) -> &PlantSpec {
        &self.config.plant
    }

    pub fn horizon(&self) -> usize {
        self.config.ppo.horizon
    }

    pub fn design_with(&self, values: &[f64]) -> Result<DesignParams> {
        let base = self.plant().initial_design()?;
        if values.len() != base.len() {
            return Err(CcdError::dim("design values", base.len(), values.len()));
        }
        Ok(base.with_values(values))
    }

    /// Nominal model with the disturbance assumed before any deployment.
    pub fn nominal_env(&self, design: &DesignParams) -> Result<NominalEnv> {
        let disturbance = match self.plant() {
            PlantSpec::Illustrative(c) => NominalDisturbance::Gaussian(c.noise_std.to_vec()),
            PlantSpec::Suspension(c) => NominalDisturbance::ScalarGaussian(c.road_rate_std),
        };
        Ok(NominalEnv {
            plant: self.plant().nominal(design)?,
            reward: self.reward.clone(),
            disturbance,
            action_bounds: self.plant().input_bounds(),
            blowup_bound: self.config.lifecycle.blowup_bound,
        })
    }

    pub fn truth_env(&self, design: &DesignParams) -> Result<TruthEnv> {
        Ok(match self.plant() {
            PlantSpec::Illustrative(c) => TruthEnv::Illustrative(IllustrativeTruthEnv {
                config: c.clone(),
                truth: c.truth.clone(),
                plant: c.discrete(design)?,
                reward: self.reward.clone(),
                blowup_bound: self.config.lifecycle.blowup_bound,
            }),
            PlantSpec::Suspension(c) => TruthEnv::Suspension(SuspensionTruthEnv::new(
                c.clone(),
                design,
                self.reward.clone(),
                self.track.clone().expect("suspension scenarios carry a track"),
                self.horizon(),
            )?),
        })
    }

    /// Nominal model plus the learned correction, with the band-width
    /// penalty in the reward.
    pub fn corrected_env(&self, design: &DesignParams, model: &QuantileModel) -> Result<CorrectedEnv> {
        CorrectedEnv::new(
            self.plant().nominal(design)?,
            model.clone(),
            self.reward.clone().with_quantile_penalty(self.config.lifecycle.quantile_penalty),
            self.plant().input_bounds(),
            self.config.lifecycle.blowup_bound,
        )
    }

    /// Fresh networks sized for this plant; the value scale follows the
    /// pretraining labels.
    pub fn new_agent(&self, samples: &[SampleTriplet]) -> Result<Agent> {
        let a = &self.config.agent;
        let (lower, upper) = self.plant().state_bounds();
        let scaling = FeatureScaling::from_bounds(&lower, &upper);
        let (ul, uu) = self.plant().input_bounds();
        let action_scale = ul.abs().max(uu.abs());
        let design_dim = self.plant().initial_design()?.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.config.seed, STREAM_AGENT, 0));
        let std_scale = a.initial_std_fraction * action_scale / softplus(a.std_bias);
        let mut policy = GaussianPolicy::new(
            &a.network,
            scaling.clone(),
            design_dim,
            action_scale,
            std_scale,
            a.std_bias,
            &mut rng,
        )?;
        policy.min_std = a.min_std;
        let value = ValueNet::new(&a.network, scaling, design_dim, value_scale_for(samples), &mut rng)?;
        Ok(Agent { policy, value })
    }

    /// The fixed evaluation starts shared by every generation.
    pub fn evaluation_starts(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.config.seed, STREAM_EVAL_STARTS, 0));
        (0..self.config.lifecycle.eval_rollouts)
            .map(|_| self.starts.sample(&mut rng))
            .collect()
    }
}
