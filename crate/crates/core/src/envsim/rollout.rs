use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::env::{Environment, InitialStates};
use crate::dynamics::DesignParams;
use crate::error::{CcdError, Result};
use crate::tensorgrad::Matrix;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian log-density of `u` under `N(mean, std²)`.
#[inline]
pub fn gaussian_log_prob(u: f64, mean: f64, std: f64) -> f64 {
    let z = (u - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for episode `index` of stream `stream` (e.g. an epoch) under `base`.
pub fn seed_for(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ stream) ^ index.rotate_left(17))
}

/// Action distribution and value estimate for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeads {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub value: Vec<f64>,
}

/// A read-only policy/value snapshot usable from rollout workers.
pub trait PolicyEval: Sync {
    /// `states` is one row per state; `design` is the design the policy
    /// conditions on.
    fn heads(&self, states: &Matrix, design: &DesignParams) -> Result<PolicyHeads>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    Stochastic,
    /// Apply the mean action. Noise is still drawn so random streams line up
    /// with stochastic runs.
    MeanAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub mode: RolloutMode,
    pub workers: usize,
    pub seed: u64,
    /// Separates independent batches under one base seed (epoch number, …).
    pub stream: u64,
    /// Added to each episode's index when asking the environment to begin
    /// (selects the stretch of any exogenous signal).
    pub episode_offset: u64,
}

impl RolloutConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            mode: RolloutMode::Stochastic,
            workers: 1,
            seed,
            stream: 0,
            episode_offset: 0,
        }
    }
}

/// Where episode `i` starts.
#[derive(Debug, Clone, Copy)]
pub enum Starts<'a> {
    Sample(&'a InitialStates),
    /// Episode `i` starts at `states[i]`.
    Fixed(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    /// Applied (bound-clipped) inputs.
    pub actions: Vec<f64>,
    /// Sampled inputs before clipping; `log_probs` refer to these.
    pub raw_actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// One entry per state. The last is the bootstrap value: `V(x_H)` after
    /// a full horizon, 0 after early termination.
    pub values: Vec<f64>,
    /// Exogenous signal per step when the environment exposes one.
    pub exogenous: Vec<f64>,
    pub terminated_early: bool,
    pub design_snapshot: DesignParams,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        discounted_return(&self.rewards, gamma)
    }
}

pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Generalized advantage estimation. `values` carries one more entry than
/// `rewards` (the bootstrap value).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(CcdError::dim("gae values", rewards.len() + 1, values.len()));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        let delta = rewards[k] + gamma * values[k + 1] - values[k];
        acc = delta + gamma * lambda * acc;
        adv[k] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

struct Live {
    cursor: super::env::EnvCursor,
    rng: ChaCha8Rng,
    episode: Episode,
}

fn run_chunk<E, P>(env: &E, policy: &P, starts: Starts<'_>, range: Range<usize>, cfg: &RolloutConfig) -> Result<Vec<Episode>>
where
    E: Environment + ?Sized,
    P: PolicyEval + ?Sized,
{
    let design = env.design().clone();
    let (lo, hi) = env.action_bounds();
    let dim = env.state_dim();
    let mut live: Vec<Live> = Vec::with_capacity(range.len());
    for i in range {
        let seed = seed_for(cfg.seed, cfg.stream, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = match starts {
            Starts::Sample(init) => init.sample(&mut rng),
            Starts::Fixed(list) => list
                .get(i)
                .cloned()
                .ok_or_else(|| CcdError::Config(format!("no initial state for episode {i}")))?,
        };
        if x0.len() != dim {
            return Err(CcdError::dim("initial state", dim, x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(CcdError::Numeric("non-finite initial state".into()));
        }
        let cursor = env.begin(&x0, cfg.episode_offset + i as u64);
        live.push(Live {
            cursor,
            rng,
            episode: Episode {
                states: vec![x0],
                actions: Vec::with_capacity(cfg.horizon),
                raw_actions: Vec::with_capacity(cfg.horizon),
                rewards: Vec::with_capacity(cfg.horizon),
                log_probs: Vec::with_capacity(cfg.horizon),
                values: Vec::with_capacity(cfg.horizon + 1),
                exogenous: Vec::new(),
                terminated_early: false,
                design_snapshot: design.clone(),
                seed,
            },
        });
    }

    let mut active: Vec<usize> = (0..live.len()).collect();
    let mut clipped = 0usize;
    let gather = |live: &[Live], active: &[usize]| {
        Matrix::from_vec(
            active.len(),
            dim,
            active.iter().flat_map(|&j| live[j].cursor.x.iter().copied()).collect(),
        )
    };
    for _ in 0..cfg.horizon {
        if active.is_empty() {
            break;
        }
        let heads = policy.heads(&gather(&live, &active), &design)?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &j) in active.iter().enumerate() {
            let l = &mut live[j];
            let (mean, std) = (heads.mean[row], heads.std[row]);
            let z: f64 = StandardNormal.sample(&mut l.rng);
            let raw = match cfg.mode {
                RolloutMode::Stochastic => mean + std * z,
                RolloutMode::MeanAction => mean,
            };
            let u = raw.clamp(lo, hi);
            if u != raw {
                clipped += 1;
            }
            let step = env.step(&mut l.cursor, u, &mut l.rng)?;
            let ep = &mut l.episode;
            ep.values.push(heads.value[row]);
            ep.raw_actions.push(raw);
            ep.log_probs.push(gaussian_log_prob(raw, mean, std));
            ep.actions.push(u);
            ep.rewards.push(step.reward);
            if let Some(d) = step.exogenous {
                ep.exogenous.push(d);
            }
            let bad = step.terminated || step.x_next.iter().any(|v| !v.is_finite());
            ep.states.push(step.x_next);
            if bad {
                ep.terminated_early = true;
                ep.values.push(0.0);
            } else {
                still.push(j);
            }
        }
        active = still;
    }
    if !active.is_empty() {
        let heads = policy.heads(&gather(&live, &active), &design)?;
        for (row, &j) in active.iter().enumerate() {
            live[j].episode.values.push(heads.value[row]);
        }
    }
    if clipped > 0 {
        log::debug!("{clipped} sampled actions clipped to [{lo}, {hi}]");
    }
    Ok(live.into_iter().map(|l| l.episode).collect())
}

/// Rolls out `n` episodes, split across `cfg.workers` threads. Each episode
/// owns its random stream, so the result does not depend on the worker
/// count.
pub fn collect<E, P>(env: &E, policy: &P, starts: Starts<'_>, n: usize, cfg: &RolloutConfig) -> Result<Vec<Episode>>
where
    E: Environment + ?Sized,
    P: PolicyEval + ?Sized,
{
    if cfg.horizon == 0 {
        return Err(CcdError::Config("rollout horizon must be at least 1".into()));
    }
    if let Starts::Fixed(list) = starts {
        if list.len() < n {
            return Err(CcdError::Config(format!(
                "{n} episodes requested but only {} initial states given",
                list.len()
            )));
        }
    }
    let workers = cfg.workers.clamp(1, n.max(1));
    if workers == 1 {
        return run_chunk(env, policy, starts, 0..n, cfg);
    }
    let per = n.div_ceil(workers);
    let ranges: Vec<Range<usize>> = (0..workers)
        .map(|w| (w * per).min(n)..((w + 1) * per).min(n))
        .filter(|r| !r.is_empty())
        .collect();
    let results: Vec<Result<Vec<Episode>>> = std::thread::scope(|s| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| s.spawn(move || run_chunk(env, policy, starts, r, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    /// Undiscounted episode returns.
    pub returns: Vec<f64>,
    pub episodes: Vec<Episode>,
}

impl EvalStats {
    pub fn from_episodes(episodes: Vec<Episode>) -> Self {
        let returns: Vec<f64> = episodes.iter().map(Episode::total_reward).collect();
        let (mean, std) = mean_std(&returns);
        Self {
            mean,
            std,
            returns,
            episodes,
        }
    }
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Monte Carlo return statistics over `n` rollouts.
pub fn evaluate<E, P>(env: &E, policy: &P, starts: Starts<'_>, n: usize, cfg: &RolloutConfig) -> Result<EvalStats>
where
    E: Environment + ?Sized,
    P: PolicyEval + ?Sized,
{
    if n == 0 {
        return Err(CcdError::Config("evaluation needs at least one rollout".into()));
    }
    Ok(EvalStats::from_episodes(collect(env, policy, starts, n, cfg)?))
}

/// Flattened transitions with GAE advantages, ready for PPO updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Matrix,
    pub next_states: Matrix,
    /// Design values each transition was collected under (one row each).
    pub designs: Matrix,
    pub actions: Vec<f64>,
    pub raw_actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub log_probs_old: Vec<f64>,
    pub values_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Statistics the advantages were normalized with.
    pub advantage_mean: f64,
    pub advantage_std: f64,
}

impl TransitionBatch {
    pub fn from_episodes(episodes: &[Episode], gamma: f64, lambda: f64, normalize: bool) -> Result<Self> {
        let dim = episodes
            .first()
            .map(|e| e.states[0].len())
            .ok_or_else(|| CcdError::Config("no episodes to batch".into()))?;
        let m = episodes[0].design_snapshot.len();
        let total: usize = episodes.iter().map(Episode::len).sum();
        let mut states = Vec::with_capacity(total * dim);
        let mut next = Vec::with_capacity(total * dim);
        let mut designs = Vec::with_capacity(total * m);
        let mut b = Self {
            states: Matrix::zeros(0, dim),
            next_states: Matrix::zeros(0, dim),
            designs: Matrix::zeros(0, m),
            actions: Vec::with_capacity(total),
            raw_actions: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            log_probs_old: Vec::with_capacity(total),
            values_old: Vec::with_capacity(total),
            advantages: Vec::with_capacity(total),
            returns: Vec::with_capacity(total),
            advantage_mean: 0.0,
            advantage_std: 1.0,
        };
        for ep in episodes {
            let (adv, ret) = compute_gae(&ep.rewards, &ep.values, gamma, lambda)?;
            for k in 0..ep.len() {
                states.extend_from_slice(&ep.states[k]);
                next.extend_from_slice(&ep.states[k + 1]);
                designs.extend_from_slice(ep.design_snapshot.values());
            }
            b.actions.extend_from_slice(&ep.actions);
            b.raw_actions.extend_from_slice(&ep.raw_actions);
            b.rewards.extend_from_slice(&ep.rewards);
            b.log_probs_old.extend_from_slice(&ep.log_probs);
            b.values_old.extend_from_slice(&ep.values[..ep.len()]);
            b.advantages.extend(adv);
            b.returns.extend(ret);
        }
        b.states = Matrix::from_vec(total, dim, states);
        b.next_states = Matrix::from_vec(total, dim, next);
        b.designs = Matrix::from_vec(total, m, designs);
        if normalize {
            b.normalize_advantages();
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Shifts and scales advantages to zero mean and unit (population)
    /// standard deviation.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n == 0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self
            .advantages
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        let scale = if std > 1e-12 { std } else { 1.0 };
        for a in &mut self.advantages {
            *a = (*a - mean) / scale;
        }
        self.advantage_mean = mean;
        self.advantage_std = scale;
    }

    /// Rows `idx` as a new batch (normalization stats carried over).
    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            states: self.states.select_rows(idx),
            next_states: self.next_states.select_rows(idx),
            designs: self.designs.select_rows(idx),
            actions: pick(&self.actions),
            raw_actions: pick(&self.raw_actions),
            rewards: pick(&self.rewards),
            log_probs_old: pick(&self.log_probs_old),
            values_old: pick(&self.values_old),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            advantage_mean: self.advantage_mean,
            advantage_std: self.advantage_std,
        }
    }
}

/// One row per step: `t, x…, u, r, logp, V`, plus a final row with the
/// terminal state. The header comment records the design snapshot.
pub fn write_episode_csv(episode: &Episode, path: &Path) -> Result<()> {
    fs::write(path, episode_csv(episode)?).map_err(|e| CcdError::io(path, e))
}

/// [`write_episode_csv`] into memory.
pub fn episode_csv(episode: &Episode) -> Result<Vec<u8>> {
    let dim = episode.states[0].len();
    let mut out = Vec::new();
    let design: Vec<String> = episode
        .design_snapshot
        .names()
        .iter()
        .zip(episode.design_snapshot.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    writeln!(out, "# design: {}", design.join(", ")).expect("write to vec");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.extend(["u", "r", "logp", "V"].map(String::from));
        w.write_record(&header)?;
        for (k, x) in episode.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(f64::to_string));
            if k < episode.len() {
                row.push(episode.actions[k].to_string());
                row.push(episode.rewards[k].to_string());
                row.push(episode.log_probs[k].to_string());
            } else {
                row.extend([String::new(), String::new(), String::new()]);
            }
            row.push(episode.values.get(k).map(f64::to_string).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| CcdError::Parse(e.to_string()))?;
    }
    Ok(out)
}
