//! MDP wrappers around the plants, rewards, episode rollout and
//! return/advantage bookkeeping.

mod env;
mod reward;
mod rollout;

pub(crate) use env::blown;
pub use env::{
    EnvCursor, Environment, IllustrativeTruthEnv, InitialStates, NominalDisturbance, NominalEnv,
    StepResult, SuspensionTruthEnv,
};
pub use reward::RewardSpec;
pub use rollout::{
    collect, compute_gae, discounted_return, episode_csv, evaluate, gaussian_log_prob, seed_for, write_episode_csv,
    Episode, EvalStats, PolicyEval, PolicyHeads, RolloutConfig, RolloutMode, Starts, TransitionBatch,
};

/// Discount factor used by both case studies.
pub const DEFAULT_GAMMA: f64 = 0.99;
/// GAE smoothing.
pub const DEFAULT_LAMBDA: f64 = 0.95;
