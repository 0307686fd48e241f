use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DiscretePlant;
use crate::envsim::Episode;
use crate::error::{CcdError, Result};
use crate::tensorgrad::Matrix;

/// How the nominal reference trajectory `x̄` is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// `x̄_{k+1} = A·x_k + B·u_k`: each residual is the one-step model error,
    /// which is exactly the correction term of `x' = Ax + Bu + e`.
    OneStep,
    /// `x̄_{k+1} = A·x̄_k + B·u_k` from `x̄_0 = x_0`: accumulated drift.
    OpenLoop,
}

/// One step of residual data: `(e_k, x_k, u_k) → e_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    /// Index of the source episode.
    pub episode: usize,
    /// Chain index; open-loop propagation starts a new chain after a split.
    pub segment: usize,
    pub step: usize,
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    pub u: f64,
    pub e_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub state_dim: usize,
    pub mode: ResidualMode,
    pub records: Vec<ResidualRecord>,
    pub episodes: usize,
    /// Chains restarted because the open-loop reference diverged.
    pub splits: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Residual chains of logged truth episodes against `plant`.
///
/// In open-loop mode the reference is restarted from the logged state when
/// it exceeds `divergence_bound`, and the remainder becomes a new chain.
pub fn build_residuals(
    episodes: &[Episode],
    plant: &DiscretePlant,
    mode: ResidualMode,
    divergence_bound: f64,
) -> Result<ResidualDataset> {
    let n = plant.state_dim();
    let zero = vec![0.0; n];
    let mut records = Vec::new();
    let mut splits = 0;
    for (id, ep) in episodes.iter().enumerate() {
        if ep.states.len() != ep.actions.len() + 1 {
            return Err(CcdError::dim("episode states", ep.actions.len() + 1, ep.states.len()));
        }
        if let Some(bad) = ep.states.iter().find(|x| x.len() != n) {
            return Err(CcdError::dim("episode state", n, bad.len()));
        }
        let mut segment = 0;
        let mut x_bar = ep.states[0].clone();
        let mut e = zero.clone();
        for (k, &u) in ep.actions.iter().enumerate() {
            let x = &ep.states[k];
            let x_next = &ep.states[k + 1];
            let base = match mode {
                ResidualMode::OneStep => x,
                ResidualMode::OpenLoop => &x_bar,
            };
            let mut next_bar = plant.step_unchecked(base, &[u], &zero);
            if mode == ResidualMode::OpenLoop && !(max_abs(&next_bar) <= divergence_bound) {
                log::info!("episode {id}: nominal reference diverged at step {k}, chain split");
                splits += 1;
                segment += 1;
                e = zero.clone();
                next_bar = plant.step_unchecked(x, &[u], &zero);
            }
            let e_next: Vec<f64> = x_next.iter().zip(&next_bar).map(|(a, b)| a - b).collect();
            records.push(ResidualRecord {
                episode: id,
                segment,
                step: k,
                e: e.clone(),
                x: x.clone(),
                u,
                e_next: e_next.clone(),
            });
            x_bar = next_bar;
            e = e_next;
        }
    }
    Ok(ResidualDataset {
        state_dim: n,
        mode,
        records,
        episodes: episodes.len(),
        splits,
    })
}

impl ResidualDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Model inputs `[e, x, u]`, one row per record.
    pub fn inputs(&self, idx: &[usize]) -> Matrix {
        let n = self.state_dim;
        let mut m = Matrix::zeros(idx.len(), 2 * n + 1);
        for (r, &i) in idx.iter().enumerate() {
            let rec = &self.records[i];
            let row = m.row_mut(r);
            row[..n].copy_from_slice(&rec.e);
            row[n..2 * n].copy_from_slice(&rec.x);
            row[2 * n] = rec.u;
        }
        m
    }

    pub fn targets(&self, idx: &[usize]) -> Matrix {
        Matrix::from_rows(&idx.iter().map(|&i| self.records[i].e_next.clone()).collect::<Vec<_>>())
    }

    /// Record indices for a train/validation split by whole episodes.
    pub fn split_by_episode(&self, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(CcdError::Config(format!("validation fraction {validation_fraction} outside [0, 1)")));
        }
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.episode).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(CcdError::Config("residual dataset is empty".into()));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut n_val = (ids.len() as f64 * validation_fraction).round() as usize;
        if validation_fraction > 0.0 && ids.len() > 1 {
            n_val = n_val.clamp(1, ids.len() - 1);
        }
        let val: std::collections::HashSet<usize> = ids[..n_val].iter().copied().collect();
        let (mut train, mut valid) = (Vec::new(), Vec::new());
        for (i, r) in self.records.iter().enumerate() {
            if val.contains(&r.episode) {
                valid.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, valid))
    }

    fn header(&self) -> Vec<String> {
        let n = self.state_dim;
        let mut h: Vec<String> = ["episode", "segment", "step"].map(String::from).to_vec();
        h.extend((1..=n).map(|i| format!("e{i}")));
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.push("u".into());
        h.extend((1..=n).map(|i| format!("e_next{i}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| CcdError::io(path, e))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.records {
            let mut row = vec![r.episode.to_string(), r.segment.to_string(), r.step.to_string()];
            row.extend(r.e.iter().chain(&r.x).map(f64::to_string));
            row.push(r.u.to_string());
            row.extend(r.e_next.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))
    }

    pub fn read_csv(path: &Path, mode: ResidualMode) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CcdError::io(path, e))?;
        Self::from_csv_reader(file, mode, path)
    }

    /// Parses CSV from any reader; `origin` only labels errors.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, mode: ResidualMode, origin: &Path) -> Result<Self> {
        let path = origin;
        let mut rd = csv::Reader::from_reader(reader);
        let width = rd.headers().map_err(|e| CcdError::csv(path, e))?.len();
        if width < 7 || (width - 4) % 3 != 0 {
            return Err(CcdError::Parse(format!("{}: unexpected column count {width}", path.display())));
        }
        let n = (width - 4) / 3;
        let mut records = Vec::new();
        let mut max_episode = None;
        let mut splits = 0;
        for row in rd.records() {
            let row = row.map_err(|e| CcdError::csv(path, e))?;
            let int = |i: usize| -> Result<usize> {
                row[i].parse().map_err(|_| CcdError::Parse(format!("bad integer {:?}", &row[i])))
            };
            let num = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| CcdError::Parse(format!("bad number {:?}", &row[i])))
            };
            let vec = |start: usize| -> Result<Vec<f64>> { (start..start + n).map(num).collect() };
            let rec = ResidualRecord {
                episode: int(0)?,
                segment: int(1)?,
                step: int(2)?,
                e: vec(3)?,
                x: vec(3 + n)?,
                u: num(3 + 2 * n)?,
                e_next: vec(4 + 2 * n)?,
            };
            if let Some(prev) = records.last().map(|r: &ResidualRecord| (r.episode, r.segment)) {
                if prev.0 == rec.episode && rec.segment > prev.1 {
                    splits += 1;
                }
            }
            max_episode = max_episode.max(Some(rec.episode));
            records.push(rec);
        }
        Ok(Self {
            state_dim: n,
            mode,
            records,
            episodes: max_episode.map_or(0, |m| m + 1),
            splits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::IllustrativeConfig;

    fn episode(states: Vec<Vec<f64>>, actions: Vec<f64>) -> Episode {
        let t = actions.len();
        Episode {
            states,
            raw_actions: actions.clone(),
            actions,
            rewards: vec![0.0; t],
            log_probs: vec![0.0; t],
            values: vec![0.0; t + 1],
            exogenous: Vec::new(),
            terminated_early: false,
            design_snapshot: IllustrativeConfig::default().design().unwrap(),
            seed: 0,
        }
    }

    fn plant() -> DiscretePlant {
        let cfg = IllustrativeConfig::default();
        cfg.discrete(&cfg.design().unwrap()).unwrap()
    }

    fn roll(plant: &DiscretePlant, x0: &[f64], us: &[f64], bias: &[f64]) -> Vec<Vec<f64>> {
        let mut xs = vec![x0.to_vec()];
        for &u in us {
            let next = plant.step_unchecked(xs.last().unwrap(), &[u], bias);
            xs.push(next);
        }
        xs
    }

    #[test]
    fn identical_dynamics_give_zero_residuals() {
        let p = plant();
        let us = [0.3, -0.2, 0.5, 0.0];
        let ep = episode(roll(&p, &[1.0, -1.0], &us, &[0.0, 0.0]), us.to_vec());
        for mode in [ResidualMode::OneStep, ResidualMode::OpenLoop] {
            let ds = build_residuals(std::slice::from_ref(&ep), &p, mode, 1e6).unwrap();
            assert!(ds.records.iter().all(|r| r.e_next.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn constant_bias_first_step() {
        let p = plant();
        let us = [0.4, 0.1];
        let ep = episode(roll(&p, &[0.5, 0.2], &us, &[0.1, -0.2]), us.to_vec());
        let ds = build_residuals(&[ep], &p, ResidualMode::OpenLoop, 1e6).unwrap();
        assert!((ds.records[0].e_next[0] - 0.1).abs() < 1e-12);
        assert!((ds.records[0].e_next[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn chains_reconstruct_logged_states() {
        let p = plant();
        let us: Vec<f64> = (0..30).map(|k| (k as f64 * 0.7).sin()).collect();
        let xs = roll(&p, &[0.3, -0.4], &us, &[0.05, 0.02]);
        let ep = episode(xs.clone(), us.clone());
        let ds = build_residuals(std::slice::from_ref(&ep), &p, ResidualMode::OpenLoop, 1e6).unwrap();
        let mut x_bar = xs[0].clone();
        for (k, r) in ds.records.iter().enumerate() {
            x_bar = p.step_unchecked(&x_bar, &[us[k]], &[0.0, 0.0]);
            for i in 0..2 {
                assert!((x_bar[i] + r.e_next[i] - xs[k + 1][i]).abs() < 1e-12);
            }
        }
        for w in ds.records.windows(2) {
            assert_eq!(w[0].e_next, w[1].e);
        }
    }

    #[test]
    fn open_loop_split_on_divergence() {
        let p = plant();
        let us = vec![0.0; 40];
        // The truth is held at the origin while the reference drifts away.
        let xs = vec![vec![0.0, 0.0]; 41];
        let mut states = xs;
        states[0] = vec![1.0, 1.0];
        let ep = episode(states, us);
        let ds = build_residuals(&[ep], &p, ResidualMode::OpenLoop, 1.5).unwrap();
        assert!(ds.splits >= 1);
        assert_eq!(ds.len(), 40);
    }

    #[test]
    fn csv_round_trip_and_split() {
        let p = plant();
        let eps: Vec<Episode> = (0..10)
            .map(|i| {
                let us = vec![0.1 * i as f64; 5];
                episode(roll(&p, &[0.1, 0.1 * i as f64], &us, &[0.01, 0.0]), us)
            })
            .collect();
        let ds = build_residuals(&eps, &p, ResidualMode::OneStep, 1e6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("res.csv");
        ds.write_csv(&path).unwrap();
        let back = ResidualDataset::read_csv(&path, ResidualMode::OneStep).unwrap();
        assert_eq!(back, ds);
        let (tr, va) = ds.split_by_episode(0.2, 3).unwrap();
        assert_eq!(va.len(), 10);
        assert_eq!(tr.len(), 40);
        let ve: std::collections::HashSet<_> = va.iter().map(|&i| ds.records[i].episode).collect();
        assert!(tr.iter().all(|&i| !ve.contains(&ds.records[i].episode)));
    }
}
