use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{ppo_loss, LossConfig, PathwiseData};
use super::policy::{Agent, AgentDocument};
use crate::dynamics::{DesignParams, PlantSpec};
use crate::envsim::{
    collect, seed_for, Environment, Episode, InitialStates, RolloutConfig, RolloutMode, Starts, TransitionBatch,
};
use crate::error::{CcdError, Result};
use crate::tensorgrad::{Adam, Matrix, StepOutcome, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub minibatch: usize,
    pub update_passes: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: usize,
    /// Update the design alongside the networks.
    pub optimize_design: bool,
    /// Also differentiate the one-step reward through the dynamics' design
    /// dependence.
    pub pathwise_env_grad: bool,
    pub pathwise_coef: f64,
    /// Save a checkpoint bundle every this many epochs (0: never).
    pub checkpoint_interval: usize,
    /// Abort after this many consecutive epochs without a finite update.
    pub max_nonfinite_epochs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            value_coef: 0.5,
            lr: 1e-5,
            epochs: 10_000,
            episodes_per_epoch: 16,
            minibatch: 256,
            update_passes: 4,
            gamma: crate::envsim::DEFAULT_GAMMA,
            lambda: crate::envsim::DEFAULT_LAMBDA,
            horizon: 100,
            optimize_design: true,
            pathwise_env_grad: false,
            pathwise_coef: 1.0,
            checkpoint_interval: 0,
            max_nonfinite_epochs: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(CcdError::Config("clip_eps must lie in (0, 1)".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(CcdError::Config("lr must be finite and non-negative".into()));
        }
        if self.episodes_per_epoch == 0 || self.minibatch == 0 || self.horizon == 0 {
            return Err(CcdError::Config(
                "episodes_per_epoch, minibatch and horizon must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub avg_return: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_std: f64,
    pub design: Vec<f64>,
    pub skipped_updates: usize,
    pub dropped: usize,
    pub terminated_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub design_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn returns(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.avg_return).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "epoch",
            "avg_return",
            "loss",
            "policy_loss",
            "value_loss",
            "mean_std",
        ]
        .map(String::from)
        .to_vec();
        header.extend(self.design_names.iter().cloned());
        header.extend(["skipped_updates", "dropped", "terminated_episodes"].map(String::from));
        w.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                e.avg_return.to_string(),
                e.loss.to_string(),
                e.policy_loss.to_string(),
                e.value_loss.to_string(),
                e.mean_std.to_string(),
            ];
            row.extend(e.design.iter().map(f64::to_string));
            row.extend([
                e.skipped_updates.to_string(),
                e.dropped.to_string(),
                e.terminated_episodes.to_string(),
            ]);
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| CcdError::io(path, e))
    }
}

/// Saved training state: networks, design and the config it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointBundle {
    pub epoch: usize,
    pub agent: AgentDocument,
    pub design_names: Vec<String>,
    pub design: Vec<f64>,
    pub config_hash: String,
}

/// Where and how a run reports progress.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub seed: u64,
    pub workers: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Return every collected episode in [`TrainOutcome::episodes`].
    pub keep_episodes: bool,
}

impl TrainOptions {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self {
            seed,
            workers,
            checkpoint_dir: None,
            keep_episodes: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub design: DesignParams,
    pub history: TrainingHistory,
    /// Collected episodes in order, when requested.
    pub episodes: Vec<Episode>,
}

/// Per-epoch design sensitivities for the pathwise term.
pub type JacobianFn<'a> = &'a (dyn Fn(&DesignParams) -> Result<Vec<(Matrix, Matrix)>> + Sync);

pub fn pathwise_jacobian(plant: &PlantSpec) -> impl Fn(&DesignParams) -> Result<Vec<(Matrix, Matrix)>> + Sync + '_ {
    move |d| plant.design_jacobian(d)
}

fn save_checkpoint(dir: &Path, epoch: usize, agent: &Agent, design: &DesignParams, hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CcdError::io(dir, e))?;
    let bundle = CheckpointBundle {
        epoch,
        agent: agent.to_document(),
        design_names: design.names().to_vec(),
        design: design.values().to_vec(),
        config_hash: hash.to_string(),
    };
    let path = dir.join(format!("checkpoint-{epoch:06}.json"));
    let text = serde_json::to_string_pretty(&bundle)?;
    std::fs::write(&path, text).map_err(|e| CcdError::io(&path, e))?;
    Ok(path)
}

/// Joint PPO over policy, value and design.
///
/// `make_env` rebuilds the environment for the current design at the start
/// of every epoch.
pub fn train<E, F>(
    make_env: F,
    agent: Agent,
    design: DesignParams,
    init: &InitialStates,
    cfg: &PpoConfig,
    opts: &TrainOptions,
    jacobian: Option<JacobianFn<'_>>,
) -> Result<TrainOutcome>
where
    E: Environment,
    F: Fn(&DesignParams) -> Result<E>,
{
    cfg.validate()?;
    let mut agent = agent;
    let mut design = design;
    let mut z = Matrix::row_vector(&design.normalized());
    let hash = cfg.hash();
    let loss_cfg = LossConfig {
        clip_eps: cfg.clip_eps,
        value_coef: cfg.value_coef,
        pathwise_coef: if cfg.pathwise_env_grad { cfg.pathwise_coef } else { 0.0 },
    };
    if cfg.pathwise_env_grad && jacobian.is_none() {
        return Err(CcdError::Config(
            "pathwise_env_grad requires design sensitivities".into(),
        ));
    }

    let mut adam = {
        let mut shapes: Vec<(usize, usize)> = Vec::new();
        shapes.extend(agent.policy.mean_net.params().iter().map(|p| p.shape()));
        shapes.extend(agent.policy.std_net.params().iter().map(|p| p.shape()));
        shapes.extend(agent.value.net.params().iter().map(|p| p.shape()));
        shapes.push(z.shape());
        Adam::new(&shapes)
    };

    let mut history = TrainingHistory {
        design_names: design.names().to_vec(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut kept = Vec::new();
    let mut bad_streak = 0usize;
    let mut last_good: Option<(Agent, DesignParams)> = None;
    let mut last_checkpoint = String::from("none");

    for epoch in 0..cfg.epochs {
        let env = make_env(&design)?;
        let rollout = RolloutConfig {
            horizon: cfg.horizon,
            mode: RolloutMode::Stochastic,
            workers: opts.workers.max(1),
            seed: opts.seed,
            stream: epoch as u64,
            episode_offset: (epoch * cfg.episodes_per_epoch) as u64,
        };
        let episodes = collect(&env, &agent, Starts::Sample(init), cfg.episodes_per_epoch, &rollout)?;
        let terminated = episodes.iter().filter(|e| e.terminated_early).count();
        let avg_return = episodes.iter().map(|e| e.total_reward()).sum::<f64>() / episodes.len() as f64;
        let batch = TransitionBatch::from_episodes(&episodes, cfg.gamma, cfg.lambda, true)?;
        if opts.keep_episodes {
            kept.extend(episodes);
        }
        let mean_std = {
            let (_, std) = agent.policy.distribution(&batch.states, z.data())?;
            std.iter().sum::<f64>() / std.len().max(1) as f64
        };
        let pathwise = match (cfg.pathwise_env_grad, jacobian) {
            (true, Some(jac)) => Some(PathwiseData::new(
                &batch,
                &jac(&design)?,
                &design.widths(),
                env.reward_spec().clone(),
                z.data().to_vec(),
            )),
            _ => None,
        };

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(opts.seed ^ 0x5EED_0F_B00C, epoch as u64, 0));
        let (mut loss_sum, mut pol_sum, mut val_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        let mut skipped = 0usize;
        let mut dropped = 0usize;
        for _pass in 0..cfg.update_passes {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch) {
                let mb = batch.select(chunk);
                let pw = pathwise.as_ref().map(|p| p.select(chunk));
                let mut tape = Tape::new();
                let graph = ppo_loss(&mut tape, &agent, &mb, z.data(), &loss_cfg, pw.as_ref())?;
                dropped += graph.dropped;
                let loss = tape.scalar(graph.loss);
                if !loss.is_finite() {
                    skipped += 1;
                    continue;
                }
                let grads = tape.backward(graph.loss)?;
                let (mut g, mut gz) = graph.gradients(&grads);
                if !cfg.optimize_design {
                    gz = Matrix::zeros(gz.rows(), gz.cols());
                }
                g.push(gz);
                let mut params: Vec<&mut Matrix> = Vec::new();
                params.extend(agent.policy.mean_net.params_mut());
                params.extend(agent.policy.std_net.params_mut());
                params.extend(agent.value.net.params_mut());
                params.push(&mut z);
                match adam.step(&mut params, &g, cfg.lr) {
                    StepOutcome::Applied => {
                        loss_sum += loss;
                        pol_sum += graph.policy_term;
                        val_sum += graph.value_term;
                        steps += 1;
                    }
                    StepOutcome::SkippedNonFinite => {
                        log::warn!("epoch {epoch}: non-finite gradient, update skipped");
                        skipped += 1;
                    }
                }
                if cfg.optimize_design {
                    let before = design.normalized();
                    z.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                    if z.data() != before.as_slice() {
                        design.set_normalized(z.data());
                    }
                }
            }
        }

        let healthy = steps > 0 && agent.policy.all_finite() && agent.value.net.all_finite();
        if healthy {
            bad_streak = 0;
            last_good = Some((agent.clone(), design.clone()));
        } else {
            bad_streak += 1;
            if bad_streak >= cfg.max_nonfinite_epochs {
                if let (Some(dir), Some((a, d))) = (&opts.checkpoint_dir, &last_good) {
                    last_checkpoint = save_checkpoint(dir, epoch, a, d, &hash)?.display().to_string();
                }
                return Err(CcdError::TrainingAborted {
                    step: format!("ppo epoch {epoch}"),
                    reason: format!("{bad_streak} consecutive epochs without a finite update"),
                    checkpoint: last_checkpoint,
                });
            }
        }
        let n = steps.max(1) as f64;
        history.epochs.push(EpochRecord {
            epoch,
            avg_return,
            loss: loss_sum / n,
            policy_loss: pol_sum / n,
            value_loss: val_sum / n,
            mean_std,
            design: design.values().to_vec(),
            skipped_updates: skipped,
            dropped,
            terminated_episodes: terminated,
        });
        if epoch % 500 == 0 || epoch + 1 == cfg.epochs {
            log::info!(
                "epoch {epoch}: avg return {avg_return:.3}, design {:?}",
                design.values()
            );
        }
        if let Some(dir) = &opts.checkpoint_dir {
            if cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0 {
                last_checkpoint = save_checkpoint(dir, epoch + 1, &agent, &design, &hash)?
                    .display()
                    .to_string();
            }
        }
    }
    Ok(TrainOutcome {
        agent,
        design,
        history,
        episodes: kept,
    })
}
