use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::reward::RewardSpec;
use crate::dynamics::{
    ContinuousPlant, DesignParams, DiscretePlant, IllustrativeConfig, IllustrativeTruthConfig,
    SuspensionConfig,
};
use crate::error::Result;
use crate::profiles::DisturbanceTrack;

/// Per-episode mutable environment state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvCursor {
    pub x: Vec<f64>,
    /// Environment-internal state hidden from the policy (e.g. the
    /// discrepancy model's running error).
    pub hidden: Vec<f64>,
    /// Steps taken in this episode.
    pub t: usize,
    /// Offset into any time-indexed exogenous signal.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub x_next: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    /// Exogenous scalar signal applied this step, when the plant has one.
    pub exogenous: Option<f64>,
}

/// A Markov decision process over a (possibly hidden) plant.
///
/// Implementations are immutable; all per-episode state lives in the
/// [`EnvCursor`] and randomness comes from the caller's RNG.
pub trait Environment: Sync {
    fn state_dim(&self) -> usize;
    fn design(&self) -> &DesignParams;
    fn action_bounds(&self) -> (f64, f64);
    fn reward_spec(&self) -> &RewardSpec;
    /// Nominal plant the policy is designed against.
    fn nominal(&self) -> &DiscretePlant;

    fn begin(&self, x0: &[f64], episode: u64) -> EnvCursor {
        let _ = episode;
        EnvCursor {
            x: x0.to_vec(),
            hidden: Vec::new(),
            t: 0,
            offset: 0,
        }
    }

    /// Applies `u` (already clipped to the action bounds) and advances.
    fn step(&self, cursor: &mut EnvCursor, u: f64, rng: &mut ChaCha8Rng) -> Result<StepResult>;
}

/// Exogenous input of the nominal model.
#[derive(Debug, Clone, PartialEq)]
pub enum NominalDisturbance {
    None,
    /// Independent Gaussian noise per state with these standard deviations.
    Gaussian(Vec<f64>),
    /// Scalar Gaussian signal entering through `E_d`.
    ScalarGaussian(f64),
}

pub(crate) fn blown(x: &[f64], bound: f64) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > bound)
}

/// `x⁺ = A x + B u + w` with an assumed disturbance model.
#[derive(Debug, Clone)]
pub struct NominalEnv {
    pub plant: DiscretePlant,
    pub reward: RewardSpec,
    pub disturbance: NominalDisturbance,
    pub action_bounds: (f64, f64),
    pub blowup_bound: f64,
}

impl Environment for NominalEnv {
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

    fn step(&self, cursor: &mut EnvCursor, u: f64, rng: &mut ChaCha8Rng) -> Result<StepResult> {
        let n = self.plant.state_dim();
        let (w, exogenous) = match &self.disturbance {
            NominalDisturbance::None => (vec![0.0; n], None),
            NominalDisturbance::Gaussian(std) => (
                std.iter()
                    .map(|s| {
                        let z: f64 = StandardNormal.sample(rng);
                        s * z
                    })
                    .collect(),
                None,
            ),
            NominalDisturbance::ScalarGaussian(std) => {
                let z: f64 = StandardNormal.sample(rng);
                let d = std * z;
                (self.plant.disturbance(d), Some(d))
            }
        };
        let x_next = self.plant.step_unchecked(&cursor.x, &[u], &w);
        let reward = self.reward.reward_unchecked(&x_next, u, None);
        cursor.x.clone_from(&x_next);
        cursor.t += 1;
        Ok(StepResult {
            terminated: blown(&x_next, self.blowup_bound),
            x_next,
            reward,
            exogenous,
        })
    }
}

/// Hidden truth plant for the two-state benchmark.
#[derive(Debug, Clone)]
pub struct IllustrativeTruthEnv {
    pub config: IllustrativeConfig,
    pub truth: IllustrativeTruthConfig,
    pub plant: DiscretePlant,
    pub reward: RewardSpec,
    pub blowup_bound: f64,
}

impl Environment for IllustrativeTruthEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn design(&self) -> &DesignParams {
        &self.plant.design
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.config.input_bounds[0], self.config.input_bounds[1])
    }

    fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    fn nominal(&self) -> &DiscretePlant {
        &self.plant
    }

    fn step(&self, cursor: &mut EnvCursor, u: f64, rng: &mut ChaCha8Rng) -> Result<StepResult> {
        let p = self.plant.design.value("p")?;
        let x_next = self.truth.step(&self.config, &cursor.x, u, p, rng).to_vec();
        let reward = self.reward.reward_unchecked(&x_next, u, None);
        cursor.x.clone_from(&x_next);
        cursor.t += 1;
        Ok(StepResult {
            terminated: blown(&x_next, self.blowup_bound),
            x_next,
            reward,
            exogenous: None,
        })
    }
}

/// Hidden truth plant for the quarter car: nonlinear continuous dynamics
/// driven by a road/speed disturbance track.
#[derive(Debug, Clone)]
pub struct SuspensionTruthEnv {
    pub config: SuspensionConfig,
    pub continuous: ContinuousPlant,
    pub plant: DiscretePlant,
    pub reward: RewardSpec,
    pub track: DisturbanceTrack,
    /// Steps of the track consumed per episode index.
    pub episode_stride: usize,
}

impl SuspensionTruthEnv {
    pub fn new(
        config: SuspensionConfig,
        design: &DesignParams,
        reward: RewardSpec,
        track: DisturbanceTrack,
        episode_stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            continuous: config.continuous(design)?,
            plant: config.discrete(design)?,
            config,
            reward,
            track,
            episode_stride,
        })
    }
}

impl Environment for SuspensionTruthEnv {
    fn state_dim(&self) -> usize {
        4
    }

    fn design(&self) -> &DesignParams {
        &self.plant.design
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.config.input_bounds[0], self.config.input_bounds[1])
    }

    fn reward_spec(&self) -> &RewardSpec {
        &self.reward
    }

    fn nominal(&self) -> &DiscretePlant {
        &self.plant
    }

    fn begin(&self, x0: &[f64], episode: u64) -> EnvCursor {
        EnvCursor {
            x: x0.to_vec(),
            hidden: Vec::new(),
            t: 0,
            offset: (episode as usize).wrapping_mul(self.episode_stride),
        }
    }

    fn step(&self, cursor: &mut EnvCursor, u: f64, _rng: &mut ChaCha8Rng) -> Result<StepResult> {
        let d = self.track.rate_at(cursor.offset + cursor.t);
        let out = self
            .config
            .truth
            .step(&self.continuous, &self.config, &cursor.x, u, d)?;
        let reward = self.reward.reward_unchecked(&out.x, u, None);
        cursor.x.clone_from(&out.x);
        cursor.t += 1;
        Ok(StepResult {
            x_next: out.x,
            reward,
            terminated: out.blown_up,
            exogenous: Some(d),
        })
    }
}

/// Where episodes start.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// Uniform in a box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Uniform choice from a fixed set of states.
    Pool(Vec<Vec<f64>>),
}

impl InitialStates {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialStates::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| if u > l { rng.gen_range(l..u) } else { l })
                .collect(),
            InitialStates::Pool(pool) => pool[rng.gen_range(0..pool.len())].clone(),
        }
    }
}
