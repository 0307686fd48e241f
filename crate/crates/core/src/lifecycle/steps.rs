use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluation::{self, Comparison};
use super::registry::{sha256_hex, EntryKind, IndexEntry, Registry, StagedEntry};
use super::scenario::{
    Scenario, STREAM_CODESIGN, STREAM_DEPLOY, STREAM_EVAL, STREAM_FIT, STREAM_PRETRAIN, STREAM_SAMPLES,
};
use crate::discrepancy::{build_residuals, fit, FitReport, QuantileModel, ResidualDataset};
use crate::dynamics::DesignParams;
use crate::envsim::{collect, evaluate, seed_for, Environment, Episode, RolloutConfig, Starts};
use crate::error::{CcdError, Result};
use crate::ppo::{pathwise_jacobian, train, Agent, PpoConfig, TrainOptions, TrainOutcome};
use crate::pretrain::{generate_samples, pretrain_networks, PretrainReport, SampleDiagnostics};

pub const CONFIG_FILE: &str = "config.toml";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const AGENT_FILE: &str = "agent.json";
pub const DESIGN_FILE: &str = "design.json";
pub const RECORD_FILE: &str = "record.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const QUANTILE_FILE: &str = "quantile.json";
pub const FIT_FILE: &str = "fit.json";

pub fn gen_name(g: usize) -> String {
    format!("gen-{g}")
}

pub fn deploy_name(g: usize) -> String {
    format!("deploy-{g}")
}

pub fn fit_name(g: usize) -> String {
    format!("uq-{g}")
}

pub fn eval_name(g: usize) -> String {
    format!("eval-{g}")
}

/// Monte Carlo return statistics on the environment a step trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalEval {
    pub mean: f64,
    pub std: f64,
    pub rollouts: usize,
    pub terminated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub diagnostics: SampleDiagnostics,
    pub report: PretrainReport,
}

/// Summary written next to a generation's checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub parent: Option<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub design_names: Vec<String>,
    pub design: Vec<f64>,
    pub epochs: usize,
    /// `"nominal"`, `"corrected"`, or `"none"` for the pretrained networks.
    pub trained_on: String,
    pub before: Option<NominalEval>,
    pub after: Option<NominalEval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub generation: usize,
    pub parent: String,
    pub seed: u64,
    pub config_sha256: String,
    pub design: Vec<f64>,
    pub episodes: usize,
    pub finetune_epochs: usize,
    pub terminated_episodes: usize,
    pub blowup_rate: f64,
    /// Blow-up rate above the configured threshold.
    pub flagged: bool,
    pub mean_return: f64,
    pub residual_rows: usize,
    pub residual_splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub generation: usize,
    pub parent: String,
    pub seed: u64,
    pub config_sha256: String,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DesignDocument {
    names: Vec<String>,
    values: Vec<f64>,
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn design_json(design: &DesignParams) -> Result<Vec<u8>> {
    to_json(&DesignDocument {
        names: design.names().to_vec(),
        values: design.values().to_vec(),
    })
}

/// Digest identifying the configuration a registry was produced with. The
/// generation count is left out so a finished lifecycle can be extended.
fn config_digest(sc: &Scenario) -> Result<String> {
    let mut cfg = sc.config.clone();
    cfg.lifecycle.generations = 1;
    Ok(sha256_hex(cfg.to_toml()?.as_bytes()))
}

/// Refuses to mix runs: the registry's pretrained entry must come from the
/// same configuration.
fn check_config(sc: &Scenario, reg: &Registry) -> Result<String> {
    let digest = config_digest(sc)?;
    if reg.contains(&gen_name(0)) {
        let rec: GenerationRecord = load_record(reg, &gen_name(0))?;
        if rec.config_sha256 != digest {
            return Err(CcdError::Config(format!(
                "registry {} was produced with a different configuration",
                reg.root().display()
            )));
        }
    }
    Ok(digest)
}

pub fn load_agent(reg: &Registry, entry: &str) -> Result<Agent> {
    Agent::from_json(&reg.read_string(entry, AGENT_FILE)?)
}

pub fn load_design(sc: &Scenario, reg: &Registry, entry: &str) -> Result<DesignParams> {
    let doc: DesignDocument = serde_json::from_str(&reg.read_string(entry, DESIGN_FILE)?)?;
    let design = sc.design_with(&doc.values)?;
    if design.names() != doc.names.as_slice() {
        return Err(CcdError::Parse(format!("{entry}: design names {:?} do not match the plant", doc.names)));
    }
    Ok(design)
}

pub fn load_record<T: serde::de::DeserializeOwned>(reg: &Registry, entry: &str) -> Result<T> {
    Ok(serde_json::from_str(&reg.read_string(entry, RECORD_FILE)?)?)
}

fn require(reg: &Registry, entry: &str, step: &str) -> Result<()> {
    if reg.contains(entry) {
        Ok(())
    } else {
        Err(CcdError::Incomplete(format!("{step} needs registry entry {entry}, which is missing")))
    }
}

fn existing(reg: &Registry, name: &str) -> Option<IndexEntry> {
    let e = reg.get(name).cloned();
    if e.is_some() {
        log::info!("{name} already in the registry; skipping");
    }
    e
}

fn nominal_eval<E: Environment>(sc: &Scenario, env: &E, agent: &Agent, stream: u64) -> Result<NominalEval> {
    let mut rc = RolloutConfig::new(sc.horizon(), seed_for(sc.config.seed, STREAM_EVAL, stream));
    rc.workers = sc.config.workers;
    let n = sc.config.lifecycle.nominal_eval_rollouts;
    let ev = evaluate(env, agent, Starts::Sample(&sc.starts), n, &rc)?;
    Ok(NominalEval {
        mean: ev.mean,
        std: ev.std,
        rollouts: n,
        terminated: ev.episodes.iter().filter(|e| e.terminated_early).count(),
    })
}

fn generation_entry(
    g: usize,
    parent: Option<String>,
    outcome: &TrainOutcome,
    mut record: GenerationRecord,
) -> Result<StagedEntry> {
    record.design_names = outcome.design.names().to_vec();
    record.design = outcome.design.values().to_vec();
    let kind = if g == 0 { EntryKind::Pretrained } else { EntryKind::Optimized };
    let mut staged = StagedEntry::new(gen_name(g), kind, g, parent);
    staged.add(AGENT_FILE, outcome.agent.to_json().into_bytes());
    staged.add(DESIGN_FILE, design_json(&outcome.design)?);
    staged.add(HISTORY_FILE, outcome.history.to_csv()?.into_bytes());
    staged.add(RECORD_FILE, to_json(&record)?);
    Ok(staged)
}

/// Step 0: label feasible states with the constrained controller and
/// regress the networks on them.
pub fn run_step0(sc: &Scenario, reg: &mut Registry) -> Result<IndexEntry> {
    let digest = check_config(sc, reg)?;
    if let Some(e) = existing(reg, &gen_name(0)) {
        return Ok(e);
    }
    let cfg = &sc.config;
    let seed = seed_for(cfg.seed, STREAM_SAMPLES, 0);
    let set = generate_samples(sc.plant(), &sc.reward, &cfg.pretrain, seed, cfg.workers)?;
    log::info!("pretraining samples: {:?}", set.diagnostics);
    let mut agent = sc.new_agent(&set.samples)?;
    let design = sc.plant().initial_design()?;
    let report = pretrain_networks(
        &set.samples,
        &mut agent,
        &design,
        &cfg.pretrain,
        seed_for(cfg.seed, STREAM_PRETRAIN, 0),
    )?;
    let after = nominal_eval(sc, &sc.nominal_env(&design)?, &agent, 0)?;
    let record = GenerationRecord {
        generation: 0,
        parent: None,
        seed,
        config_sha256: digest,
        design_names: design.names().to_vec(),
        design: design.values().to_vec(),
        epochs: cfg.pretrain.epochs,
        trained_on: "none".into(),
        before: None,
        after: Some(after),
        pretrain: Some(PretrainSummary {
            diagnostics: set.diagnostics.clone(),
            report,
        }),
    };
    let names = design.names().to_vec();
    let mut staged = StagedEntry::new(gen_name(0), EntryKind::Pretrained, 0, None);
    staged.add(CONFIG_FILE, cfg.to_toml()?.into_bytes());
    staged.add(SAMPLES_FILE, set.to_csv(sc.plant().state_dim(), &names)?);
    staged.add(AGENT_FILE, agent.to_json().into_bytes());
    staged.add(DESIGN_FILE, design_json(&design)?);
    staged.add(RECORD_FILE, to_json(&record)?);
    reg.commit(&staged)
}

fn codesign<E, F>(
    sc: &Scenario,
    make_env: F,
    agent: Agent,
    design: DesignParams,
    ppo: &PpoConfig,
    seed: u64,
) -> Result<TrainOutcome>
where
    E: Environment,
    F: Fn(&DesignParams) -> Result<E>,
{
    let opts = TrainOptions::new(seed, sc.config.workers);
    if ppo.pathwise_env_grad {
        let jac = pathwise_jacobian(sc.plant());
        train(make_env, agent, design, &sc.starts, ppo, &opts, Some(&jac))
    } else {
        train(make_env, agent, design, &sc.starts, ppo, &opts, None)
    }
}

/// Step 1: co-design on the nominal model with the assumed disturbance.
pub fn run_step1(sc: &Scenario, reg: &mut Registry) -> Result<IndexEntry> {
    let digest = check_config(sc, reg)?;
    if let Some(e) = existing(reg, &gen_name(1)) {
        return Ok(e);
    }
    require(reg, &gen_name(0), "step 1")?;
    let agent = load_agent(reg, &gen_name(0))?;
    let design = load_design(sc, reg, &gen_name(0))?;
    let before = nominal_eval(sc, &sc.nominal_env(&design)?, &agent, 1)?;
    let seed = seed_for(sc.config.seed, STREAM_CODESIGN, 1);
    let out = codesign(sc, |d| sc.nominal_env(d), agent, design, &sc.config.ppo, seed)?;
    let after = nominal_eval(sc, &sc.nominal_env(&out.design)?, &out.agent, 1)?;
    log::info!(
        "step 1: nominal return {:.3} ± {:.3} → {:.3} ± {:.3}",
        before.mean,
        before.std,
        after.mean,
        after.std
    );
    let record = GenerationRecord {
        generation: 1,
        parent: Some(gen_name(0)),
        seed,
        config_sha256: digest,
        design_names: Vec::new(),
        design: Vec::new(),
        epochs: sc.config.ppo.epochs,
        trained_on: "nominal".into(),
        before: Some(before),
        after: Some(after),
        pretrain: None,
    };
    let staged = generation_entry(1, Some(gen_name(0)), &out, record)?;
    reg.commit(&staged)
}

/// Step 2: run generation `g` on the truth plant (fine-tuning the policy
/// with the design frozen, if enabled) and extract residuals.
pub fn run_deploy(sc: &Scenario, reg: &mut Registry, g: usize) -> Result<IndexEntry> {
    let digest = check_config(sc, reg)?;
    if let Some(e) = existing(reg, &deploy_name(g)) {
        return Ok(e);
    }
    require(reg, &gen_name(g), "deployment")?;
    let lc = &sc.config.lifecycle;
    let agent = load_agent(reg, &gen_name(g))?;
    let design = load_design(sc, reg, &gen_name(g))?;
    let seed = seed_for(sc.config.seed, STREAM_DEPLOY, g as u64);

    let (agent, episodes, history, epochs): (Agent, Vec<Episode>, Option<String>, usize) = if lc.online_finetune {
        let epochs = lc.deploy_episodes.div_ceil(lc.finetune_episodes_per_epoch);
        let ppo = PpoConfig {
            epochs,
            episodes_per_epoch: lc.finetune_episodes_per_epoch,
            lr: lc.finetune_lr.unwrap_or(sc.config.ppo.lr),
            optimize_design: false,
            pathwise_env_grad: false,
            ..sc.config.ppo.clone()
        };
        let mut opts = TrainOptions::new(seed, sc.config.workers);
        opts.keep_episodes = true;
        let out = train(|d| sc.truth_env(d), agent, design.clone(), &sc.starts, &ppo, &opts, None)?;
        let csv = out.history.to_csv()?;
        (out.agent, out.episodes, Some(csv), epochs)
    } else {
        let env = sc.truth_env(&design)?;
        let mut rc = RolloutConfig::new(sc.horizon(), seed);
        rc.workers = sc.config.workers;
        let eps = collect(&env, &agent, Starts::Sample(&sc.starts), lc.deploy_episodes, &rc)?;
        (agent, eps, None, 0)
    };

    let terminated = episodes.iter().filter(|e| e.terminated_early).count();
    let rate = terminated as f64 / episodes.len().max(1) as f64;
    let flagged = rate > lc.blowup_flag_rate;
    if flagged {
        log::warn!("deployment {g}: {:.0}% of truth episodes blew up", 100.0 * rate);
    }
    // Blown-up episodes carry no usable model error.
    let usable: Vec<Episode> = episodes.iter().filter(|e| !e.terminated_early).cloned().collect();
    let nominal = sc.plant().nominal(&design)?;
    let data = build_residuals(&usable, &nominal, lc.residual_mode, lc.divergence_bound)?;
    let mean_return = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len().max(1) as f64;
    let record = DeploymentRecord {
        generation: g,
        parent: gen_name(g),
        seed,
        config_sha256: digest,
        design: design.values().to_vec(),
        episodes: episodes.len(),
        finetune_epochs: epochs,
        terminated_episodes: terminated,
        blowup_rate: rate,
        flagged,
        mean_return,
        residual_rows: data.len(),
        residual_splits: data.splits,
    };
    let mut staged = StagedEntry::new(deploy_name(g), EntryKind::Deployment, g, Some(gen_name(g)));
    staged.add(AGENT_FILE, agent.to_json().into_bytes());
    staged.add(DESIGN_FILE, design_json(&design)?);
    staged.add(RESIDUALS_FILE, data.to_csv()?);
    if let Some(h) = history {
        staged.add(HISTORY_FILE, h.into_bytes());
    }
    staged.add(RECORD_FILE, to_json(&record)?);
    reg.commit(&staged)
}

pub fn load_residuals(sc: &Scenario, reg: &Registry, entry: &str) -> Result<ResidualDataset> {
    let bytes = reg.read(entry, RESIDUALS_FILE)?;
    ResidualDataset::from_csv_reader(
        bytes.as_slice(),
        sc.config.lifecycle.residual_mode,
        &reg.path_of(entry, RESIDUALS_FILE),
    )
}

/// Fits the quantile discrepancy model on deployment `g`'s residuals.
pub fn run_fit(sc: &Scenario, reg: &mut Registry, g: usize) -> Result<IndexEntry> {
    let digest = check_config(sc, reg)?;
    if let Some(e) = existing(reg, &fit_name(g)) {
        return Ok(e);
    }
    require(reg, &deploy_name(g), "quantile fit")?;
    let data = load_residuals(sc, reg, &deploy_name(g))?;
    if data.is_empty() {
        return Err(CcdError::Incomplete(format!("{} holds no residual data", deploy_name(g))));
    }
    let seed = seed_for(sc.config.seed, STREAM_FIT, g as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = QuantileModel::new(data.state_dim, &sc.config.discrepancy.hidden, &mut rng)?;
    let report = fit(&data, &mut model, &sc.config.discrepancy, seed)?;
    log::info!(
        "discrepancy model {g}: median RMSE {:.4}, coverage {:.3}",
        report.metrics.median_rmse,
        report.metrics.coverage
    );
    let record = FitRecord {
        generation: g,
        parent: deploy_name(g),
        seed,
        config_sha256: digest,
        report,
    };
    let mut staged = StagedEntry::new(fit_name(g), EntryKind::Deployment, g, Some(deploy_name(g)));
    staged.add(QUANTILE_FILE, model.to_json().into_bytes());
    staged.add(FIT_FILE, to_json(&record)?);
    reg.commit(&staged)
}

/// Step 3: co-design generation `g + 1` on the nominal model corrected by
/// discrepancy model `g`, starting from the deployed policy and design.
pub fn run_step3(sc: &Scenario, reg: &mut Registry, g: usize) -> Result<IndexEntry> {
    let digest = check_config(sc, reg)?;
    let name = gen_name(g + 1);
    if let Some(e) = existing(reg, &name) {
        return Ok(e);
    }
    require(reg, &deploy_name(g), "re-optimization")?;
    require(reg, &fit_name(g), "re-optimization")?;
    let agent = load_agent(reg, &deploy_name(g))?;
    let design = load_design(sc, reg, &deploy_name(g))?;
    let model = QuantileModel::from_json(&reg.read_string(&fit_name(g), QUANTILE_FILE)?)?;
    let before = nominal_eval(sc, &sc.corrected_env(&design, &model)?, &agent, g as u64 + 1)?;
    let ppo = PpoConfig {
        epochs: sc.config.lifecycle.step3_epochs.unwrap_or(sc.config.ppo.epochs),
        lr: sc.config.lifecycle.step3_lr.unwrap_or(sc.config.ppo.lr),
        ..sc.config.ppo.clone()
    };
    let seed = seed_for(sc.config.seed, STREAM_CODESIGN, g as u64 + 1);
    let out = codesign(sc, |d| sc.corrected_env(d, &model), agent, design, &ppo, seed)?;
    let after = nominal_eval(sc, &sc.corrected_env(&out.design, &model)?, &out.agent, g as u64 + 1)?;
    log::info!(
        "generation {}: corrected-model return {:.3} ± {:.3} → {:.3} ± {:.3}",
        g + 1,
        before.mean,
        before.std,
        after.mean,
        after.std
    );
    let record = GenerationRecord {
        generation: g + 1,
        parent: Some(fit_name(g)),
        seed,
        config_sha256: digest,
        design_names: Vec::new(),
        design: Vec::new(),
        epochs: ppo.epochs,
        trained_on: "corrected".into(),
        before: Some(before),
        after: Some(after),
        pretrain: None,
    };
    let staged = generation_entry(g + 1, Some(fit_name(g)), &out, record)?;
    reg.commit(&staged)
}

/// Compares every generation up to `upto` on the truth plant.
pub fn run_evaluation(sc: &Scenario, reg: &mut Registry, upto: usize) -> Result<(IndexEntry, Comparison)> {
    check_config(sc, reg)?;
    let name = eval_name(upto);
    if let Some(e) = existing(reg, &name) {
        let cmp: Comparison = serde_json::from_str(&reg.read_string(&name, evaluation::COMPARISON_FILE)?)?;
        return Ok((e, cmp));
    }
    require(reg, &gen_name(upto), "evaluation")?;
    let mut generations = Vec::new();
    for g in 0..=upto {
        let entry = gen_name(g);
        require(reg, &entry, "evaluation")?;
        generations.push((entry.clone(), load_agent(reg, &entry)?, load_design(sc, reg, &entry)?));
    }
    let (staged, cmp) = evaluation::evaluate_generations(sc, &generations, &name, &gen_name(upto))?;
    let entry = reg.commit(&staged)?;
    Ok((entry, cmp))
}

/// Runs (or resumes) the whole loop up to `generations` and the final
/// truth-plant comparison.
pub fn run_lifecycle(sc: &Scenario, reg: &mut Registry, generations: usize) -> Result<Comparison> {
    if generations == 0 {
        return Err(CcdError::Config("generations must be at least 1".into()));
    }
    let step = |name: &str, r: Result<IndexEntry>| -> Result<IndexEntry> {
        r.map_err(|e| match e {
            CcdError::TrainingAborted { step, reason, checkpoint } => CcdError::TrainingAborted {
                step: format!("{name} ({step})"),
                reason,
                checkpoint,
            },
            other => other,
        })
    };
    step("step 0", run_step0(sc, reg))?;
    step("step 1", run_step1(sc, reg))?;
    for g in 1..generations {
        step("deployment", run_deploy(sc, reg, g))?;
        step("quantile fit", run_fit(sc, reg, g))?;
        step("re-optimization", run_step3(sc, reg, g))?;
    }
    Ok(run_evaluation(sc, reg, generations)?.1)
}

