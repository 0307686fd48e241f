//! Dense operator-splitting (ADMM) solver for
//! `min ½ xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`.
//!
//! Alternates a regularized linear solve with projection onto the box and a
//! dual update; detects primal infeasibility from the dual iterates'
//! difference. Problems here have at most a few hundred variables.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CcdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_pinf: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub check_every: usize,
    pub adapt_every: usize,
    /// Ruiz equilibration passes; 0 disables scaling.
    pub scaling_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_pinf: 1e-5,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_every: 5,
            adapt_every: 50,
            scaling_iters: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    /// Constraint values projected into `[l, u]`.
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Row-wise nonzeros of the constraint matrix; the MPC constraints are
/// mostly zeros, so products go through this instead of the dense form.
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseRows {
    fn from_dense(a: &DMatrix<f64>) -> Self {
        let rows = (0..a.nrows())
            .map(|i| {
                (0..a.ncols())
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| (j, a[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows, ncols: a.ncols() }
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (r, &yi) in self.rows.iter().zip(y.iter()) {
            if yi != 0.0 {
                for &(j, v) in r {
                    out[j] += v * yi;
                }
            }
        }
        out
    }

    /// `Aᵀ diag(w) A`.
    fn gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.ncols, self.ncols);
        for (r, &wi) in self.rows.iter().zip(w.iter()) {
            for &(i, vi) in r {
                for &(j, vj) in r {
                    k[(i, j)] += wi * vi * vj;
                }
            }
        }
        k
    }
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.p.nrows();
        let m = self.a.nrows();
        if self.p.ncols() != n || self.q.len() != n || self.a.ncols() != n {
            return Err(CcdError::dim("qp variables", n, self.a.ncols()));
        }
        if self.l.len() != m || self.u.len() != m {
            return Err(CcdError::dim("qp constraints", m, self.l.len()));
        }
        if self.l.iter().zip(self.u.iter()).any(|(l, u)| l > u) {
            return Err(CcdError::Solver("qp bounds reversed".into()));
        }
        Ok(())
    }

    /// Ruiz equilibration: returns `(D, E, c)` such that the problem over
    /// `x = D x̄` with rows scaled by `E` and cost by `c` is better balanced.
    fn equilibrate(&self, iters: usize) -> (DVector<f64>, DVector<f64>, f64) {
        let n = self.p.nrows();
        let m = self.a.nrows();
        let mut p = self.p.clone();
        let mut a = self.a.clone();
        let mut q = self.q.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let mut c = 1.0;
        let inv_sqrt = |v: f64| if v < 1e-4 { 1.0 } else { (1.0 / v.sqrt()).clamp(1e-4, 1e4) };
        for _ in 0..iters {
            let dt = DVector::from_iterator(
                n,
                (0..n).map(|j| inv_sqrt(p.column(j).amax().max(a.column(j).amax()))),
            );
            let et = DVector::from_iterator(m, (0..m).map(|i| inv_sqrt(a.row(i).amax())));
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dt[i] * dt[j];
                }
                for i in 0..m {
                    a[(i, j)] *= et[i] * dt[j];
                }
                q[j] *= dt[j];
            }
            d.component_mul_assign(&dt);
            e.component_mul_assign(&et);
            let mean_col = (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n.max(1) as f64;
            let gamma = 1.0 / mean_col.max(q.amax()).max(1e-4);
            let gamma = gamma.clamp(1e-4, 1e4);
            p *= gamma;
            q *= gamma;
            c *= gamma;
        }
        (d, e, c)
    }

    pub fn solve(&self, s: &QpSettings) -> Result<QpSolution> {
        self.validate()?;
        let n = self.p.nrows();
        let m = self.a.nrows();
        let (d, e, c) = self.equilibrate(s.scaling_iters);
        let d_inv = d.map(|v| 1.0 / v);
        let e_inv = e.map(|v| 1.0 / v);
        // Scaled data.
        let mut ps = self.p.clone();
        let mut a_s = self.a.clone();
        for j in 0..n {
            for i in 0..n {
                ps[(i, j)] *= c * d[i] * d[j];
            }
            for i in 0..m {
                a_s[(i, j)] *= e[i] * d[j];
            }
        }
        let qs = self.q.component_mul(&d) * c;
        let ls = self.l.component_mul(&e);
        let us = self.u.component_mul(&e);
        let sa = SparseRows::from_dense(&a_s);
        let is_eq: Vec<bool> = self
            .l
            .iter()
            .zip(self.u.iter())
            .map(|(l, u)| (u - l).abs() < 1e-12)
            .collect();
        let mut rho = s.rho;
        let rho_vec = |rho: f64| -> DVector<f64> {
            DVector::from_iterator(m, is_eq.iter().map(|&e| if e { 1e3 * rho } else { rho }))
        };
        let factor = |rv: &DVector<f64>| -> Result<Cholesky<f64, Dyn>> {
            let mut k = &ps + DMatrix::identity(n, n) * s.sigma;
            k += sa.gram(rv);
            Cholesky::new(k).ok_or_else(|| CcdError::Solver("qp system not positive definite".into()))
        };
        let mut rv = rho_vec(rho);
        let mut chol = factor(&rv)?;
        let q_norm = inf_norm(&self.q);

        let mut x = DVector::zeros(n);
        let mut z = DVector::zeros(m);
        let mut y = DVector::zeros(m);
        let mut y_prev = y.clone();
        let (mut rp, mut rd) = (f64::INFINITY, f64::INFINITY);
        let finish = |status, it, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, rp, rd| QpSolution {
            status,
            x: x.component_mul(&d),
            z: z.component_mul(&e_inv),
            y: y.component_mul(&e) / c,
            iterations: it,
            primal_residual: rp,
            dual_residual: rd,
        };
        for it in 1..=s.max_iter {
            let rhs = &x * s.sigma - &qs + sa.tr_mul(&(rv.component_mul(&z) - &y));
            let x_tilde = chol.solve(&rhs);
            let z_tilde = sa.mul(&x_tilde);
            x = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
            let z_hat = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            let mut z_new = &z_hat + y.component_div(&rv);
            for i in 0..m {
                z_new[i] = z_new[i].clamp(ls[i], us[i]);
            }
            y_prev.copy_from(&y);
            y += rv.component_mul(&(&z_hat - &z_new));
            z = z_new;

            if it % s.check_every != 0 && it != s.max_iter {
                continue;
            }
            // Residuals in the original units.
            let ax = sa.mul(&x).component_mul(&e_inv);
            let zu = z.component_mul(&e_inv);
            let px = (&ps * &x).component_mul(&d_inv) / c;
            let aty = sa.tr_mul(&y).component_mul(&d_inv) / c;
            rp = inf_norm(&(&ax - &zu));
            rd = inf_norm(&(&px + &self.q + &aty));
            let ep = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(&zu));
            let ed = s.eps_abs + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(q_norm);
            if rp <= ep && rd <= ed {
                return Ok(finish(QpStatus::Solved, it, &x, &z, &y, rp, rd));
            }
            // Primal infeasibility certificate from the dual step.
            let dy = (&y - &y_prev).component_mul(&e);
            let ndy = inf_norm(&dy);
            if ndy > 1e-12 {
                let atdy = inf_norm(&self_tr_mul(&sa, &e_inv, &d_inv, &dy));
                let support: f64 = (0..m)
                    .map(|i| {
                        if dy[i] > 0.0 {
                            self.u[i] * dy[i]
                        } else if dy[i] < 0.0 {
                            self.l[i] * dy[i]
                        } else {
                            0.0
                        }
                    })
                    .sum();
                if atdy <= s.eps_pinf * ndy && support <= -s.eps_pinf * ndy {
                    return Ok(finish(QpStatus::PrimalInfeasible, it, &x, &z, &y, rp, rd));
                }
            }
            if s.adapt_every > 0 && it % s.adapt_every == 0 {
                let num = rp / inf_norm(&ax).max(inf_norm(&zu)).max(1e-10);
                let den = rd / inf_norm(&px).max(inf_norm(&aty)).max(q_norm).max(1e-10);
                let new_rho = (rho * (num / den.max(1e-12)).sqrt()).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    rho = new_rho;
                    rv = rho_vec(rho);
                    chol = factor(&rv)?;
                }
            }
        }
        Ok(finish(QpStatus::MaxIterations, s.max_iter, &x, &z, &y, rp, rd))
    }
}

/// `Aᵀ dy` in original units, given the scaled rows and an unscaled `dy`.
fn self_tr_mul(sa: &SparseRows, e_inv: &DVector<f64>, d_inv: &DVector<f64>, dy: &DVector<f64>) -> DVector<f64> {
    sa.tr_mul(&dy.component_mul(e_inv)).component_mul(d_inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        // min (x-1)² + 2(y+2)²
        let qp = QpProblem {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            q: DVector::from_vec(vec![-2.0, 8.0]),
            a: DMatrix::identity(2, 2),
            l: DVector::from_element(2, -1e6),
            u: DVector::from_element(2, 1e6),
        };
        let sol = qp.solve(&QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-5 && (sol.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn active_bound() {
        // min (x-3)² s.t. x ≤ 1
        let qp = QpProblem {
            p: DMatrix::from_element(1, 1, 2.0),
            q: DVector::from_element(1, -6.0),
            a: DMatrix::identity(1, 1),
            l: DVector::from_element(1, -10.0),
            u: DVector::from_element(1, 1.0),
        };
        let sol = qp.solve(&QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn detects_infeasibility() {
        // x ≥ 2 and x ≤ 1 expressed as two rows.
        let qp = QpProblem {
            p: DMatrix::from_element(1, 1, 1.0),
            q: DVector::zeros(1),
            a: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            l: DVector::from_vec(vec![2.0, -5.0]),
            u: DVector::from_vec(vec![5.0, 1.0]),
        };
        let sol = qp.solve(&QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn equality_constraint() {
        // min x² + y² s.t. x + y = 1
        let qp = QpProblem {
            p: DMatrix::identity(2, 2) * 2.0,
            q: DVector::zeros(2),
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            l: DVector::from_element(1, 1.0),
            u: DVector::from_element(1, 1.0),
        };
        let sol = qp.solve(&QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 0.5).abs() < 1e-5 && (sol.x[1] - 0.5).abs() < 1e-5);
    }
}
