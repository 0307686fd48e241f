use serde::{Deserialize, Serialize};

use super::registry::{EntryKind, StagedEntry};
use super::scenario::{Scenario, STREAM_EVAL};
use super::ActionMode;
use crate::dynamics::DesignParams;
use crate::envsim::{collect, episode_csv, evaluate, seed_for, Episode, RolloutConfig, RolloutMode, Starts};
use crate::error::{CcdError, Result};
use crate::ppo::Agent;

pub const COMPARISON_FILE: &str = "comparison.json";
pub const RETURNS_FILE: &str = "returns.csv";
pub const SIGMA_FILE: &str = "sigma_ss.csv";
pub const STARTS_FILE: &str = "starts.csv";

pub fn trajectory_file(generation: &str, condition: usize) -> String {
    format!("traj-{generation}-ic{condition}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub name: String,
    pub design_names: Vec<String>,
    pub design: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub rollouts: usize,
    pub terminated: usize,
}

/// σ_ss of one quantity for one initial condition, per generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    /// 1-based index into the canonical states.
    pub condition: usize,
    pub metric: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub generations: Vec<GenerationStats>,
    pub canonical_states: Vec<Vec<f64>>,
    pub steady_window: usize,
    pub sigma_ss: Vec<SigmaRow>,
}

impl Comparison {
    pub fn stats(&self, name: &str) -> Option<&GenerationStats> {
        self.generations.iter().find(|g| g.name == name)
    }

    /// σ_ss of `metric` under `condition` for generation `name`.
    pub fn sigma(&self, condition: usize, metric: &str, name: &str) -> Option<f64> {
        let col = self.generations.iter().position(|g| g.name == name)?;
        self.sigma_ss
            .iter()
            .find(|r| r.condition == condition && r.metric == metric)
            .map(|r| r.values[col])
    }
}

/// Population standard deviation of the trailing `window` values.
pub fn steady_state_sigma(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    (tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// σ_ss of the selected states (over the last `window` visited states)
/// followed by σ_ss of the input (over the last `window` actions).
pub fn sigma_ss(episode: &Episode, states: &[usize], window: usize) -> Vec<f64> {
    let visited = &episode.states[1..];
    let mut out: Vec<f64> = states
        .iter()
        .map(|&i| steady_state_sigma(&visited.iter().map(|x| x[i]).collect::<Vec<_>>(), window))
        .collect();
    out.push(steady_state_sigma(&episode.actions, window));
    out
}

fn metric_names(states: &[usize]) -> Vec<String> {
    let mut m: Vec<String> = states.iter().map(|i| format!("x{}", i + 1)).collect();
    m.push("u".into());
    m
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))
}

/// Paired truth-plant evaluation: every generation sees the same starts,
/// random streams and disturbance stretches.
pub(crate) fn evaluate_generations(
    sc: &Scenario,
    generations: &[(String, Agent, DesignParams)],
    entry: &str,
    parent: &str,
) -> Result<(StagedEntry, Comparison)> {
    let lc = &sc.config.lifecycle;
    let starts = sc.evaluation_starts();
    let mut rc = RolloutConfig::new(sc.horizon(), seed_for(sc.config.seed, STREAM_EVAL, 0));
    rc.workers = sc.config.workers;
    let metrics = metric_names(&lc.sigma_states);
    let mut staged = StagedEntry::new(entry, EntryKind::Evaluation, generations.len().saturating_sub(1), Some(parent.into()));

    let mut stats = Vec::new();
    let mut returns: Vec<Vec<f64>> = Vec::new();
    let mut sigma: Vec<Vec<Vec<f64>>> = Vec::new();
    for (name, agent, design) in generations {
        let env = sc.truth_env(design)?;
        let ev = evaluate(&env, agent, Starts::Fixed(&starts), starts.len(), &rc)?;
        log::info!("{name} on the truth plant: {:.4} ± {:.4}", ev.mean, ev.std);
        stats.push(GenerationStats {
            name: name.clone(),
            design_names: design.names().to_vec(),
            design: design.values().to_vec(),
            mean: ev.mean,
            std: ev.std,
            rollouts: starts.len(),
            terminated: ev.episodes.iter().filter(|e| e.terminated_early).count(),
        });
        returns.push(ev.returns);

        let mut per_condition = Vec::new();
        for (k, x0) in lc.canonical_states.iter().enumerate() {
            if x0.len() != sc.plant().state_dim() {
                return Err(CcdError::dim("canonical state", sc.plant().state_dim(), x0.len()));
            }
            let mut crc = RolloutConfig::new(sc.horizon(), seed_for(sc.config.seed, STREAM_EVAL, 100 + k as u64));
            crc.mode = match lc.canonical_actions {
                ActionMode::Stochastic => RolloutMode::Stochastic,
                ActionMode::Mean => RolloutMode::MeanAction,
            };
            let ep = collect(&env, agent, Starts::Fixed(std::slice::from_ref(x0)), 1, &crc)?.remove(0);
            per_condition.push(sigma_ss(&ep, &lc.sigma_states, lc.steady_window));
            staged.add(trajectory_file(name, k + 1), episode_csv(&ep)?);
        }
        sigma.push(per_condition);
    }

    let mut sigma_rows = Vec::new();
    for k in 0..lc.canonical_states.len() {
        for (m, metric) in metrics.iter().enumerate() {
            sigma_rows.push(SigmaRow {
                condition: k + 1,
                metric: metric.clone(),
                values: sigma.iter().map(|g| g[k][m]).collect(),
            });
        }
    }
    let cmp = Comparison {
        generations: stats,
        canonical_states: lc.canonical_states.clone(),
        steady_window: lc.steady_window,
        sigma_ss: sigma_rows,
    };

    let names: Vec<String> = generations.iter().map(|g| g.0.clone()).collect();
    let mut header = vec!["rollout".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..starts.len())
        .map(|i| {
            let mut r = vec![i.to_string()];
            r.extend(returns.iter().map(|g| g[i].to_string()));
            r
        })
        .collect();
    staged.add(RETURNS_FILE, csv_bytes(&header, &rows)?);

    let mut header = vec!["condition".to_string(), "metric".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = cmp
        .sigma_ss
        .iter()
        .map(|r| {
            let mut row = vec![r.condition.to_string(), r.metric.clone()];
            row.extend(r.values.iter().map(f64::to_string));
            row
        })
        .collect();
    staged.add(SIGMA_FILE, csv_bytes(&header, &rows)?);

    let dim = sc.plant().state_dim();
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    let rows: Vec<Vec<String>> = starts.iter().map(|x| x.iter().map(f64::to_string).collect()).collect();
    staged.add(STARTS_FILE, csv_bytes(&header, &rows)?);
    staged.add(COMPARISON_FILE, (serde_json::to_string_pretty(&cmp)? + "\n").into_bytes());
    Ok((staged, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_sigma_matches_hand_computation() {
        // Last four of [9, 1, 2, 3, 4]: mean 2.5, deviations ±1.5, ±0.5.
        let s = steady_state_sigma(&[9.0, 1.0, 2.0, 3.0, 4.0], 4);
        assert!((s - (1.25f64).sqrt()).abs() < 1e-15);
        assert_eq!(steady_state_sigma(&[5.0; 10], 5), 0.0);
    }
}
