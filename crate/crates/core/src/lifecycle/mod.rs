//! Multi-generation loop: pretrain → co-design on the nominal model →
//! deploy on the truth plant and collect residuals → fit the discrepancy
//! model → co-design again on the corrected model → …
//!
//! Every step commits one entry to an append-only [`Registry`]; a rerun skips
//! entries that already exist, so an interrupted lifecycle resumes where it
//! stopped.

mod envs;
mod evaluation;
mod registry;
mod scenario;
mod steps;

use serde::{Deserialize, Serialize};

use crate::discrepancy::ResidualMode;
use crate::error::{CcdError, Result};

pub use envs::{CorrectedEnv, TruthEnv};
pub use evaluation::{
    sigma_ss, steady_state_sigma, trajectory_file, Comparison, GenerationStats, SigmaRow, COMPARISON_FILE,
    RETURNS_FILE, SIGMA_FILE, STARTS_FILE,
};
pub use registry::{sha256_hex, EntryKind, IndexEntry, Manifest, Registry, StagedEntry, INDEX_FILE, MANIFEST_FILE};
pub use scenario::Scenario;
pub use steps::{
    deploy_name, eval_name, fit_name, gen_name, load_agent, load_design, load_record, load_residuals, run_deploy,
    run_evaluation, run_fit, run_lifecycle, run_step0, run_step1, run_step3, DeploymentRecord, FitRecord,
    GenerationRecord, NominalEval, PretrainSummary, AGENT_FILE, CONFIG_FILE, DESIGN_FILE, FIT_FILE,
    HISTORY_FILE, QUANTILE_FILE, RECORD_FILE, RESIDUALS_FILE, SAMPLES_FILE,
};

/// Registry directory inside a run directory.
pub const REGISTRY_DIR: &str = "registry";

/// How evaluation trajectories pick actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    Stochastic,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleConfig {
    /// Generations to produce (1: co-design on the nominal model only).
    pub generations: usize,
    /// Truth-plant episodes per deployment.
    pub deploy_episodes: usize,
    /// Fine-tune the policy on the truth plant during deployment, design
    /// frozen; the fine-tuning episodes are the deployment data.
    pub online_finetune: bool,
    pub finetune_episodes_per_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune_lr: Option<f64>,
    pub residual_mode: ResidualMode,
    /// Open-loop residual chains restart when the reference exceeds this.
    pub divergence_bound: f64,
    /// Quantile-width weight as a multiple of the state weight.
    pub quantile_penalty: f64,
    /// Co-design epochs on the corrected model (default: `ppo.epochs`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step3_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step3_lr: Option<f64>,
    /// Deployments with a larger share of blown-up episodes are flagged.
    pub blowup_flag_rate: f64,
    /// Rollouts per generation when comparing on the truth plant.
    pub eval_rollouts: usize,
    /// Rollouts for the nominal before/after statistics of each
    /// co-design step.
    pub nominal_eval_rollouts: usize,
    /// Initial states whose trajectories are exported and summarized.
    pub canonical_states: Vec<Vec<f64>>,
    /// Trailing steps treated as steady state.
    pub steady_window: usize,
    pub canonical_actions: ActionMode,
    /// State indices (0-based) summarized by σ_ss alongside the input.
    pub sigma_states: Vec<usize>,
    /// Simulated states beyond this magnitude end an episode.
    pub blowup_bound: f64,
}

impl LifecycleConfig {
    fn base() -> Self {
        Self {
            generations: 2,
            deploy_episodes: 150,
            online_finetune: true,
            finetune_episodes_per_epoch: 15,
            finetune_lr: None,
            residual_mode: ResidualMode::OneStep,
            divergence_bound: 1e3,
            quantile_penalty: 0.1,
            step3_epochs: None,
            step3_lr: None,
            blowup_flag_rate: 0.2,
            eval_rollouts: 1000,
            nominal_eval_rollouts: 1000,
            canonical_states: Vec::new(),
            steady_window: 50,
            canonical_actions: ActionMode::Stochastic,
            sigma_states: Vec::new(),
            blowup_bound: 1e6,
        }
    }

    pub fn illustrative() -> Self {
        Self {
            canonical_states: vec![vec![2.0, -1.0], vec![-3.0, 1.0], vec![1.0, 1.5]],
            sigma_states: vec![0, 1],
            ..Self::base()
        }
    }

    pub fn suspension() -> Self {
        Self {
            eval_rollouts: 200,
            canonical_states: vec![
                vec![0.49, 1.74, -0.02, 0.57],
                vec![-0.28, -1.08, 0.07, -0.96],
                vec![-0.40, 1.20, -0.13, 0.31],
            ],
            sigma_states: vec![2, 3],
            ..Self::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(CcdError::Config("lifecycle.generations must be at least 1".into()));
        }
        if self.deploy_episodes == 0 || self.finetune_episodes_per_epoch == 0 {
            return Err(CcdError::Config("deployment episode counts must be positive".into()));
        }
        if self.eval_rollouts == 0 || self.nominal_eval_rollouts == 0 {
            return Err(CcdError::Config("evaluation rollout counts must be positive".into()));
        }
        if !(self.quantile_penalty >= 0.0) {
            return Err(CcdError::Config("quantile_penalty must be non-negative".into()));
        }
        if self.steady_window == 0 {
            return Err(CcdError::Config("steady_window must be positive".into()));
        }
        Ok(())
    }
}
