//! Offline initialization: Latin hypercube sampling over `(x, p)`,
//! constrained-feasibility screening, optimal-control labeling and
//! supervised pretraining of the mean-policy and value networks.

mod mpc;
pub mod qp;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mpc::{Feasibility, MpcConfig, MpcProblem, MpcSolution};

use crate::dynamics::{DesignParams, PlantSpec};
use crate::envsim::{seed_for, RewardSpec};
use crate::error::{CcdError, Result};
use crate::ppo::Agent;
use crate::tensorgrad::{Adam, Matrix, StepOutcome, Tape};

/// `n` Latin-hypercube points in the box `bounds` (one `[lo, hi]` per
/// dimension). Each dimension's values fall in `n` equal-width strata, one
/// per stratum.
pub fn lhs_sample(bounds: &[[f64; 2]], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(CcdError::Config("LHS needs at least one point".into()));
    }
    if bounds.iter().any(|b| !(b[0] <= b[1])) {
        return Err(CcdError::Config("LHS bounds must be ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; bounds.len()]; n];
    for (d, b) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let w = (b[1] - b[0]) / n as f64;
        for (pt, s) in points.iter_mut().zip(strata) {
            let off: f64 = rng.gen_range(0.0..1.0);
            // Keep the point strictly inside its stratum despite rounding.
            let v = b[0] + (s as f64 + off) * w;
            let hi = b[0] + (s + 1) as f64 * w;
            pt[d] = if v >= hi && w > 0.0 { hi - w * 1e-9 } else { v };
        }
    }
    Ok(points)
}

/// A labeled pretraining sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTriplet {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub u: f64,
    /// MPC objective from `x`, without the `x` stage itself.
    pub cost_to_go: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub samples: usize,
    pub mpc: MpcConfig,
    pub epochs: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Maximum fraction of candidates lost to the solver budget before the
    /// run counts as a solver failure.
    pub max_budget_loss: f64,
    /// Give up after this many candidates per requested sample.
    pub max_candidate_ratio: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 300,
            mpc: MpcConfig::default(),
            epochs: 2000,
            lr: 1e-3,
            minibatch: 64,
            max_budget_loss: 0.05,
            max_candidate_ratio: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub candidates: usize,
    pub accepted: usize,
    pub infeasible: usize,
    pub budget_exhausted: usize,
    /// Passed the screen but the labeled trajectory failed the replay check.
    pub replay_rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<SampleTriplet>,
    pub diagnostics: SampleDiagnostics,
    pub state_bounds: Vec<[f64; 2]>,
    pub design_bounds: Vec<[f64; 2]>,
}

enum Outcome {
    Accepted(SampleTriplet),
    Infeasible,
    Budget,
    Replay,
}

fn label_one(plant: &PlantSpec, reward: &RewardSpec, base: &DesignParams, cfg: &MpcConfig, point: &[f64]) -> Result<Outcome> {
    let n = plant.state_dim();
    let (x, p) = point.split_at(n);
    let design = base.with_values(p);
    let nominal = plant.nominal(&design)?;
    let (lo, hi) = plant.state_bounds();
    let mpc = MpcProblem::new(&nominal, reward, (&lo, &hi), plant.input_bounds(), cfg)?;
    let sol = match mpc.solve_classified(x)? {
        (Feasibility::Feasible, Some(sol)) => sol,
        (Feasibility::Infeasible, _) => return Ok(Outcome::Infeasible),
        _ => return Ok(Outcome::Budget),
    };
    if !mpc.replay_ok(x, &sol.inputs) {
        log::debug!("sample {x:?} at {p:?} discarded: replay left the state box");
        return Ok(Outcome::Replay);
    }
    Ok(Outcome::Accepted(SampleTriplet {
        x: x.to_vec(),
        p: design.values().to_vec(),
        u: sol.inputs[0],
        // Returns count rewards from x₁ on, so the x₀ stage is excluded.
        cost_to_go: sol.cost - mpc.state_cost(x),
    }))
}

fn label_parallel(plant: &PlantSpec, reward: &RewardSpec, base: &DesignParams, cfg: &MpcConfig, points: &[Vec<f64>], workers: usize) -> Result<Vec<Outcome>> {
    par_map(points, workers, |p| label_one(plant, reward, base, cfg, p))
}

/// Order-preserving map over scoped worker threads.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let per = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let hs: Vec<_> = items
            .chunks(per)
            .map(|chunk| s.spawn(move || chunk.iter().map(f).collect::<Result<Vec<_>>>()))
            .collect();
        hs.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// `n` states drawn by LHS over the state box that admit a feasible MPC
/// solution at `design` using only `input_fraction` of the input range.
/// Used as the initial-state distribution for unstable plants: starts at the
/// edge of the controllable set diverge under noise and exploration.
pub fn feasible_states(
    plant: &PlantSpec,
    reward: &RewardSpec,
    cfg: &MpcConfig,
    design: &DesignParams,
    input_fraction: f64,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(input_fraction > 0.0 && input_fraction <= 1.0) {
        return Err(CcdError::Config(format!("input fraction {input_fraction} outside (0, 1]")));
    }
    let (lo, hi) = plant.state_bounds();
    let (ul, uh) = plant.input_bounds();
    let mid = 0.5 * (ul + uh);
    let half = 0.5 * (uh - ul) * input_fraction;
    let bounds: Vec<[f64; 2]> = lo.iter().zip(&hi).map(|(&l, &h)| [l, h]).collect();
    let mpc = MpcProblem::new(&plant.nominal(design)?, reward, (&lo, &hi), (mid - half, mid + half), cfg)?;
    let mut out = Vec::with_capacity(n);
    let mut tried = 0usize;
    let mut round = 0u64;
    while out.len() < n {
        if tried >= 50 * n.max(1) {
            return Err(CcdError::Solver(format!("only {} of {n} feasible starts after {tried} candidates", out.len())));
        }
        let points = lhs_sample(&bounds, (2 * (n - out.len())).max(16), seed_for(seed, 0xF5, round))?;
        round += 1;
        tried += points.len();
        let ok = par_map(&points, workers, |x| Ok(mpc.check_feasible(x)? == Feasibility::Feasible))?;
        for (x, ok) in points.into_iter().zip(ok) {
            if ok && out.len() < n {
                out.push(x);
            }
        }
    }
    Ok(out)
}

/// LHS candidates over the state box and design bounds, screened and
/// labeled until `cfg.samples` are accepted.
pub fn generate_samples(plant: &PlantSpec, reward: &RewardSpec, cfg: &PretrainConfig, seed: u64, workers: usize) -> Result<SampleSet> {
    let base = plant.initial_design()?;
    let (lo, hi) = plant.state_bounds();
    let mut bounds: Vec<[f64; 2]> = lo.iter().zip(&hi).map(|(&l, &h)| [l, h]).collect();
    let design_bounds: Vec<[f64; 2]> = base
        .lower()
        .iter()
        .zip(base.upper())
        .map(|(&l, &h)| [l, h])
        .collect();
    let state_bounds = bounds.clone();
    bounds.extend(design_bounds.iter().copied());

    let mut diag = SampleDiagnostics::default();
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut round = 0u64;
    while samples.len() < cfg.samples {
        if diag.candidates >= cfg.max_candidate_ratio * cfg.samples.max(1) {
            return Err(CcdError::Solver(format!(
                "only {} of {} samples accepted after {} candidates",
                samples.len(),
                cfg.samples,
                diag.candidates
            )));
        }
        let need = cfg.samples - samples.len();
        let batch = (2 * need).max(16);
        let points = lhs_sample(&bounds, batch, seed_for(seed, 0x1A5, round))?;
        round += 1;
        for o in label_parallel(plant, reward, &base, &cfg.mpc, &points, workers)? {
            diag.candidates += 1;
            match o {
                Outcome::Accepted(s) => {
                    if samples.len() < cfg.samples {
                        samples.push(s);
                    }
                }
                Outcome::Infeasible => diag.infeasible += 1,
                Outcome::Budget => diag.budget_exhausted += 1,
                Outcome::Replay => diag.replay_rejected += 1,
            }
        }
    }
    diag.accepted = samples.len();
    let lost = diag.budget_exhausted as f64 / diag.candidates.max(1) as f64;
    if lost > cfg.max_budget_loss {
        return Err(CcdError::Solver(format!(
            "{:.1}% of candidates exhausted the solver budget",
            100.0 * lost
        )));
    }
    Ok(SampleSet {
        samples,
        diagnostics: diag,
        state_bounds,
        design_bounds,
    })
}

/// Feasible-count of a fixed cloud of initial states at each design value.
pub fn feasible_counts(plant: &PlantSpec, reward: &RewardSpec, cfg: &MpcConfig, designs: &[Vec<f64>], cloud: &[Vec<f64>]) -> Result<Vec<usize>> {
    let base = plant.initial_design()?;
    let (lo, hi) = plant.state_bounds();
    designs
        .iter()
        .map(|p| {
            let nominal = plant.nominal(&base.with_values(p))?;
            let mpc = MpcProblem::new(&nominal, reward, (&lo, &hi), plant.input_bounds(), cfg)?;
            let mut count = 0;
            for x in cloud {
                if mpc.check_feasible(x)? == Feasibility::Feasible {
                    count += 1;
                }
            }
            Ok(count)
        })
        .collect()
}

impl SampleSet {
    pub fn write_csv(&self, path: &Path, state_dim: usize, design_names: &[String]) -> Result<()> {
        std::fs::write(path, self.to_csv(state_dim, design_names)?).map_err(|e| CcdError::io(path, e))
    }

    /// Columns `x1…, <design names>, u, cost`.
    pub fn to_csv(&self, state_dim: usize, design_names: &[String]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=state_dim).map(|i| format!("x{i}")).collect();
        header.extend(design_names.iter().cloned());
        header.extend(["u".to_string(), "cost".to_string()]);
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(f64::to_string).collect();
            row.extend(s.p.iter().map(f64::to_string));
            row.push(s.u.to_string());
            row.push(s.cost_to_go.to_string());
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_policy_loss: f64,
    pub final_policy_loss: f64,
    pub initial_value_loss: f64,
    pub final_value_loss: f64,
    pub epochs: usize,
}

fn design_rows(samples: &[SampleTriplet], base: &DesignParams) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|s| base.with_values(&s.p).normalized())
        .collect()
}

/// Fits one network by MSE; returns the `(initial, final)` full-data loss.
fn fit_head(
    net: &mut crate::tensorgrad::Mlp,
    features: &Matrix,
    targets: &[f64],
    cfg: &PretrainConfig,
    seed: u64,
    what: &str,
) -> Result<(f64, f64)> {
    let mse = |net: &crate::tensorgrad::Mlp| -> Result<f64> {
        let out = net.forward_batch(features)?;
        Ok(out
            .data()
            .iter()
            .zip(targets)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / targets.len() as f64)
    };
    let initial = mse(net)?;
    let mut adam = Adam::for_params(&net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let x = features.select_rows(chunk);
            let y = Matrix::column_vector(&chunk.iter().map(|&i| targets[i]).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let vars = net.register(&mut tape);
            let xin = tape.leaf(x);
            let out = net.forward_tape(&mut tape, &vars, xin)?;
            let yv = tape.leaf(y);
            let d = tape.sub(out, yv);
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = vars.params().into_iter().map(|v| grads.wrt(v)).collect();
            if adam.step(&mut net.params_mut(), &g, cfg.lr) == StepOutcome::SkippedNonFinite {
                log::warn!("{what} pretraining epoch {epoch}: non-finite gradient skipped");
            }
        }
        if epoch % 100 == 99 || epoch + 1 == cfg.epochs {
            let now = mse(net)?;
            if !now.is_finite() || now > 10.0 * initial.max(1e-12) {
                return Err(CcdError::TrainingAborted {
                    step: format!("{what} pretraining epoch {epoch}"),
                    reason: format!("loss diverged from {initial:.4e} to {now:.4e}"),
                    checkpoint: "none".into(),
                });
            }
        }
    }
    Ok((initial, mse(net)?))
}

/// Regresses the mean network on the `u` labels and the value network on
/// `-cost_to_go`. The std network is left as initialized.
pub fn pretrain_networks(samples: &[SampleTriplet], agent: &mut Agent, base: &DesignParams, cfg: &PretrainConfig, seed: u64) -> Result<PretrainReport> {
    if samples.len() < 50 {
        return Err(CcdError::Config(format!(
            "pretraining needs at least 50 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].x.len();
    let states = Matrix::from_vec(
        samples.len(),
        dim,
        samples.iter().flat_map(|s| s.x.iter().copied()).collect(),
    );
    let design = design_rows(samples, base);
    let xs = agent.policy.scaling.scaled_states(&states);
    let pf = Matrix::from_rows(
        &design
            .iter()
            .map(|z| crate::ppo::FeatureScaling::design_feature(z))
            .collect::<Vec<_>>(),
    );
    let features = Matrix::hcat(&[&xs, &pf]);

    let u_targets: Vec<f64> = samples.iter().map(|s| s.u / agent.policy.action_scale).collect();
    let (pi0, pi1) = fit_head(
        &mut agent.policy.mean_net,
        &features,
        &u_targets,
        cfg,
        seed_for(seed, 0xFEED, 0),
        "policy",
    )?;
    let v_targets: Vec<f64> = samples
        .iter()
        .map(|s| -s.cost_to_go / agent.value.value_scale)
        .collect();
    let (v0, v1) = fit_head(
        &mut agent.value.net,
        &features,
        &v_targets,
        cfg,
        seed_for(seed, 0xFEED, 1),
        "value",
    )?;
    Ok(PretrainReport {
        initial_policy_loss: pi0,
        final_policy_loss: pi1,
        initial_value_loss: v0,
        final_value_loss: v1,
        epochs: cfg.epochs,
    })
}

/// Value-network output scale matched to the spread of the labels.
pub fn value_scale_for(samples: &[SampleTriplet]) -> f64 {
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.cost_to_go).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.cost_to_go - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt().max(mean.abs()).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lhs_single_point_and_strata() {
        let p = lhs_sample(&[[0.0, 1.0], [-2.0, 3.0]], 1, 0).unwrap();
        assert!(p[0][0] >= 0.0 && p[0][0] < 1.0 && p[0][1] >= -2.0 && p[0][1] < 3.0);
        let p = lhs_sample(&[[0.0, 4.0]], 4, 1).unwrap();
        let mut v: Vec<f64> = p.iter().map(|x| x[0]).collect();
        v.sort_by(f64::total_cmp);
        for (i, x) in v.iter().enumerate() {
            assert!(*x >= i as f64 && *x < (i + 1) as f64);
        }
    }

    #[test]
    fn lhs_counting() {
        let n = 300;
        let b = [[-10.0, 5.0], [-5.0, 2.0], [0.5, 2.0]];
        let pts = lhs_sample(&b, n, 9).unwrap();
        for (d, bd) in b.iter().enumerate() {
            let mut hist = vec![0; n];
            for p in &pts {
                let k = (((p[d] - bd[0]) / (bd[1] - bd[0])) * n as f64).floor() as usize;
                hist[k.min(n - 1)] += 1;
            }
            assert!(hist.iter().all(|&c| c == 1));
        }
    }
}
