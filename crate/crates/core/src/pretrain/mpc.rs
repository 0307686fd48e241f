//! Finite-horizon constrained optimal control over a discrete plant, used
//! both to screen initial states for feasibility and to label them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{QpProblem, QpSettings, QpStatus};
use crate::dynamics::DiscretePlant;
use crate::envsim::RewardSpec;
use crate::error::{CcdError, Result};
use crate::linalg::{dare, to_na};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Terminal box `‖x_N‖∞ ≤ terminal_tol`.
    pub terminal_tol: f64,
    /// Constraint tightening as a fraction of each bound's magnitude, so that
    /// replaying the solver's inputs stays inside the original boxes.
    pub margin: f64,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            terminal_tol: 0.05,
            margin: 0.005,
            max_iter: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    /// The solver ran out of iterations; treated as infeasible.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<f64>,
    /// Nominal replay of `inputs` from the initial state (`N + 1` states).
    pub states: Vec<Vec<f64>>,
    /// `Σ_{k<N} (x_kᵀQx_k + r u_k²) + x_NᵀP x_N` along the replay.
    pub cost: f64,
    pub iterations: usize,
}

/// One labeling/feasibility problem family for a fixed plant.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    q_diag: Vec<f64>,
    r_u: f64,
    terminal: DMatrix<f64>,
    x_lower: Vec<f64>,
    x_upper: Vec<f64>,
    u_bounds: (f64, f64),
    x_scale: Vec<f64>,
    u_scale: f64,
    cfg: MpcConfig,
}

fn scale_of(l: f64, u: f64) -> f64 {
    let s = l.abs().max(u.abs());
    if s.is_finite() && s > 1e-9 && s <= 1e5 {
        s
    } else {
        1.0
    }
}

impl MpcProblem {
    pub fn new(
        plant: &DiscretePlant,
        reward: &RewardSpec,
        x_bounds: (&[f64], &[f64]),
        u_bounds: (f64, f64),
        cfg: &MpcConfig,
    ) -> Result<Self> {
        let n = plant.state_dim();
        if plant.input_dim() != 1 {
            return Err(CcdError::Config("labeling supports scalar inputs only".into()));
        }
        if x_bounds.0.len() != n || x_bounds.1.len() != n {
            return Err(CcdError::dim("mpc state bounds", n, x_bounds.0.len()));
        }
        if reward.q_diag.len() != n {
            return Err(CcdError::dim("mpc state weights", n, reward.q_diag.len()));
        }
        if cfg.horizon == 0 {
            return Err(CcdError::Config("mpc horizon must be positive".into()));
        }
        let a = to_na(&plant.a);
        let bm = to_na(&plant.b);
        let q = DMatrix::from_diagonal(&DVector::from_vec(reward.q_diag.clone()));
        let r = DMatrix::from_element(1, 1, reward.r_u.max(1e-12));
        let (p, _) = dare(&a, &bm, &q, &r, 100_000, 1e-12)?;
        Ok(Self {
            b: bm.column(0).into_owned(),
            a,
            q_diag: reward.q_diag.clone(),
            r_u: reward.r_u,
            terminal: p,
            x_scale: x_bounds
                .0
                .iter()
                .zip(x_bounds.1)
                .map(|(&l, &u)| scale_of(l, u))
                .collect(),
            u_scale: scale_of(u_bounds.0, u_bounds.1),
            x_lower: x_bounds.0.to_vec(),
            x_upper: x_bounds.1.to_vec(),
            u_bounds,
            cfg: cfg.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.x_lower.len()
    }

    /// Terminal weight (the infinite-horizon Riccati solution).
    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.terminal
    }

    fn inside_state_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.x_lower.iter().zip(&self.x_upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    fn tighten(&self, l: f64, u: f64) -> (f64, f64) {
        let (tl, tu) = (l + self.cfg.margin * l.abs(), u - self.cfg.margin * u.abs());
        if tl <= tu {
            (tl, tu)
        } else {
            let mid = 0.5 * (l + u);
            (mid, mid)
        }
    }

    /// Scaled QP over `[ũ_0..ũ_{N-1}, x̃_1..x̃_N]` with `u = s_u ũ`,
    /// `x = s_x ∘ x̃`.
    fn build(&self, x0: &[f64]) -> QpProblem {
        let n = self.state_dim();
        let h = self.cfg.horizon;
        let nv = h + h * n;
        let ui = |k: usize| k;
        let xi = |k: usize, i: usize| h + (k - 1) * n + i;
        let sx = &self.x_scale;
        let su = self.u_scale;

        let mut p = DMatrix::zeros(nv, nv);
        for k in 0..h {
            p[(ui(k), ui(k))] = 2.0 * self.r_u * su * su;
        }
        for k in 1..h {
            for i in 0..n {
                p[(xi(k, i), xi(k, i))] = 2.0 * self.q_diag[i] * sx[i] * sx[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                p[(xi(h, i), xi(h, j))] = 2.0 * sx[i] * self.terminal[(i, j)] * sx[j];
            }
        }
        let norm = p.diagonal().amax().max(1e-12);
        p /= norm;

        let m = h * n + nv;
        let mut a = DMatrix::zeros(m, nv);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        let ax0 = &self.a * DVector::from_column_slice(x0);
        for k in 0..h {
            for i in 0..n {
                let row = k * n + i;
                a[(row, xi(k + 1, i))] = 1.0;
                a[(row, ui(k))] = -self.b[i] * su / sx[i];
                if k == 0 {
                    l[row] = ax0[i] / sx[i];
                } else {
                    for j in 0..n {
                        a[(row, xi(k, j))] = -self.a[(i, j)] * sx[j] / sx[i];
                    }
                    l[row] = 0.0;
                }
                u[row] = l[row];
            }
        }
        let base = h * n;
        let (ul, uu) = self.tighten(self.u_bounds.0, self.u_bounds.1);
        for k in 0..h {
            let row = base + ui(k);
            a[(row, ui(k))] = 1.0;
            l[row] = ul / su;
            u[row] = uu / su;
        }
        for k in 1..=h {
            for i in 0..n {
                let row = base + xi(k, i);
                a[(row, xi(k, i))] = 1.0;
                let (mut lo, mut hi) = self.tighten(self.x_lower[i], self.x_upper[i]);
                if k == h {
                    lo = lo.max(-self.cfg.terminal_tol);
                    hi = hi.min(self.cfg.terminal_tol);
                    if lo > hi {
                        // The terminal box misses the state box entirely.
                        lo = hi;
                    }
                }
                l[row] = lo / sx[i];
                u[row] = hi / sx[i];
            }
        }
        QpProblem {
            p,
            q: DVector::zeros(nv),
            a,
            l,
            u,
        }
    }

    fn settings(&self) -> QpSettings {
        QpSettings {
            max_iter: self.cfg.max_iter,
            eps_abs: self.cfg.tolerance,
            eps_rel: self.cfg.tolerance,
            ..QpSettings::default()
        }
    }

    fn solve_raw(&self, x0: &[f64]) -> Result<(QpStatus, Vec<f64>, usize)> {
        let qp = self.build(x0);
        let sol = qp.solve(&self.settings())?;
        let inputs = (0..self.cfg.horizon)
            .map(|k| (sol.x[k] * self.u_scale).clamp(self.u_bounds.0, self.u_bounds.1))
            .collect();
        Ok((sol.status, inputs, sol.iterations))
    }

    pub fn check_feasible(&self, x0: &[f64]) -> Result<Feasibility> {
        if x0.len() != self.state_dim() {
            return Err(CcdError::dim("mpc initial state", self.state_dim(), x0.len()));
        }
        if !self.inside_state_box(x0) {
            return Ok(Feasibility::Infeasible);
        }
        let (status, _, _) = self.solve_raw(x0)?;
        Ok(match status {
            QpStatus::Solved => Feasibility::Feasible,
            QpStatus::PrimalInfeasible => Feasibility::Infeasible,
            QpStatus::MaxIterations => Feasibility::BudgetExhausted,
        })
    }

    /// Replays `inputs` through `x⁺ = Ax + Bu` from `x0`.
    pub fn replay(&self, x0: &[f64], inputs: &[f64]) -> Vec<Vec<f64>> {
        let mut x = DVector::from_column_slice(x0);
        let mut out = vec![x0.to_vec()];
        for &u in inputs {
            x = &self.a * &x + &self.b * u;
            out.push(x.iter().copied().collect());
        }
        out
    }

    /// Whether every replayed state lies in the (untightened) state box and
    /// every input in the input box.
    pub fn replay_ok(&self, x0: &[f64], inputs: &[f64]) -> bool {
        inputs
            .iter()
            .all(|&u| u >= self.u_bounds.0 && u <= self.u_bounds.1)
            && self.replay(x0, inputs).iter().all(|x| self.inside_state_box(x))
    }

    pub fn cost(&self, states: &[Vec<f64>], inputs: &[f64]) -> f64 {
        let mut c = 0.0;
        for (x, &u) in states.iter().zip(inputs) {
            c += x.iter().zip(&self.q_diag).map(|(v, q)| q * v * v).sum::<f64>();
            c += self.r_u * u * u;
        }
        let xn = DVector::from_column_slice(&states[inputs.len()]);
        c + (xn.transpose() * &self.terminal * &xn)[(0, 0)]
    }

    /// Optimal input sequence from `x0`, or `None` when the problem is
    /// infeasible or the solver budget ran out.
    pub fn solve(&self, x0: &[f64]) -> Result<Option<MpcSolution>> {
        Ok(self.solve_classified(x0)?.1)
    }

    /// Feasibility class together with the solution when one was found.
    pub fn solve_classified(&self, x0: &[f64]) -> Result<(Feasibility, Option<MpcSolution>)> {
        if x0.len() != self.state_dim() {
            return Err(CcdError::dim("mpc initial state", self.state_dim(), x0.len()));
        }
        if !self.inside_state_box(x0) {
            return Ok((Feasibility::Infeasible, None));
        }
        let (status, inputs, iterations) = self.solve_raw(x0)?;
        match status {
            QpStatus::PrimalInfeasible => return Ok((Feasibility::Infeasible, None)),
            QpStatus::MaxIterations => return Ok((Feasibility::BudgetExhausted, None)),
            QpStatus::Solved => {}
        }
        let states = self.replay(x0, &inputs);
        let cost = self.cost(&states, &inputs);
        Ok((
            Feasibility::Feasible,
            Some(MpcSolution {
                inputs,
                states,
                cost,
                iterations,
            }),
        ))
    }

    /// Stage state cost `xᵀQx`.
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.q_diag).map(|(v, q)| q * v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::IllustrativeConfig;

    fn problem(p: f64, wide: bool) -> MpcProblem {
        let cfg = IllustrativeConfig::default();
        let mut design = cfg.design().unwrap();
        design.set_values(&[p]);
        let plant = cfg.discrete(&design).unwrap();
        let mut mpc = MpcConfig::default();
        if wide {
            mpc.terminal_tol = 1e6;
            mpc.horizon = 50;
            let big = [1e6, 1e6];
            return MpcProblem::new(&plant, &RewardSpec::illustrative(), (&[-1e6, -1e6], &big), (-1e6, 1e6), &mpc)
                .unwrap();
        }
        MpcProblem::new(
            &plant,
            &RewardSpec::illustrative(),
            (&cfg.state_lower, &cfg.state_upper),
            (-1.0, 1.0),
            &mpc,
        )
        .unwrap()
    }

    #[test]
    fn origin_is_feasible_with_zero_label() {
        for p in [0.5, 1.0, 1.5, 2.0] {
            let mpc = problem(p, false);
            assert_eq!(mpc.check_feasible(&[0.0, 0.0]).unwrap(), Feasibility::Feasible);
            let sol = mpc.solve(&[0.0, 0.0]).unwrap().unwrap();
            assert!(sol.inputs[0].abs() < 1e-6 && sol.cost < 1e-9);
        }
    }

    #[test]
    fn far_outside_is_infeasible() {
        let mpc = problem(1.0, false);
        assert_eq!(mpc.check_feasible(&[100.0, -50.0]).unwrap(), Feasibility::Infeasible);
    }

    #[test]
    fn wide_boxes_recover_riccati_feedback() {
        let mpc = problem(1.0, true);
        let cfg = IllustrativeConfig::default();
        let plant = cfg.discrete(&cfg.design().unwrap()).unwrap();
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.1);
        let (_, k) = dare(&to_na(&plant.a), &to_na(&plant.b), &q, &r, 100_000, 1e-14).unwrap();
        for x0 in [[1.0, 0.5], [-2.0, 1.0], [0.3, -0.7]] {
            let sol = mpc.solve(&x0).unwrap().unwrap();
            let lqr = -(k[(0, 0)] * x0[0] + k[(0, 1)] * x0[1]);
            assert!((sol.inputs[0] - lqr).abs() < 1e-3, "{} vs {lqr}", sol.inputs[0]);
        }
    }

    #[test]
    fn solutions_replay_inside_box() {
        let mpc = problem(1.0, false);
        for x0 in [[1.0, 0.5], [-2.0, 1.0], [0.3, -0.7], [2.0, -1.5]] {
            if let Some(sol) = mpc.solve(&x0).unwrap() {
                assert!(mpc.replay_ok(&x0, &sol.inputs));
            }
        }
    }
}
