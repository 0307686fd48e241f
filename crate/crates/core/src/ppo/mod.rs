//! PPO with the physical design as a differentiable policy/value input:
//! one loss updates policy weights, value weights and the design.

mod loss;
mod policy;
mod train;

pub use loss::{clipped_surrogate, ppo_loss, smooth_l1, LossConfig, LossGraph, PathwiseData};
pub use policy::{
    Agent, AgentDocument, FeatureScaling, GaussianPolicy, HiddenActivation, NetworkSpec, PolicyVars,
    ValueNet, AGENT_FORMAT,
};
pub use train::{
    pathwise_jacobian, train, CheckpointBundle, EpochRecord, JacobianFn, PpoConfig, TrainOptions,
    TrainOutcome, TrainingHistory,
};
