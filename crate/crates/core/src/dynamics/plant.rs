use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::design::DesignParams;
use crate::error::{CcdError, Result};
use crate::linalg::{expm, from_na, to_na};
use crate::tensorgrad::Matrix;

/// `ẋ = A_c x + B_c u + E_c d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPlant {
    pub a_c: Matrix,
    pub b_c: Matrix,
    pub e_c: Matrix,
    pub design: DesignParams,
}

/// `x⁺ = A x + B u + w`, with `w = E_d d` for plants driven by a scalar
/// exogenous signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePlant {
    pub a: Matrix,
    pub b: Matrix,
    pub e_d: Matrix,
    /// Sampling period in seconds.
    pub period: f64,
    pub design: DesignParams,
}

impl ContinuousPlant {
    pub fn new(a_c: Matrix, b_c: Matrix, e_c: Matrix, design: DesignParams) -> Result<Self> {
        let n = a_c.rows();
        if a_c.cols() != n {
            return Err(CcdError::dim("A_c columns", n, a_c.cols()));
        }
        if b_c.rows() != n {
            return Err(CcdError::dim("B_c rows", n, b_c.rows()));
        }
        if e_c.rows() != n {
            return Err(CcdError::dim("E_c rows", n, e_c.rows()));
        }
        Ok(Self {
            a_c,
            b_c,
            e_c,
            design,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_c.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_c.cols()
    }

    /// `A_c x + B_c u + E_c d`.
    pub fn derivative(&self, x: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
        let mut dx = self.a_c.mul_vec(x);
        for (v, bu) in dx.iter_mut().zip(self.b_c.mul_vec(u)) {
            *v += bu;
        }
        for (v, ed) in dx.iter_mut().zip(self.e_c.mul_vec(d)) {
            *v += ed;
        }
        dx
    }
}

/// Zero-order-hold discretization through one exponential of the augmented
/// block matrix `[[A_c, B_c, E_c], [0, 0, 0]]·T`.
pub fn discretize_zoh(plant: &ContinuousPlant, period: f64) -> Result<DiscretePlant> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(CcdError::Config(format!(
            "sampling period must be positive, got {period}"
        )));
    }
    let n = plant.state_dim();
    let m = plant.input_dim();
    let q = plant.e_c.cols();
    let size = n + m + q;
    let mut aug = DMatrix::<f64>::zeros(size, size);
    aug.view_mut((0, 0), (n, n)).copy_from(&to_na(&plant.a_c));
    aug.view_mut((0, n), (n, m)).copy_from(&to_na(&plant.b_c));
    aug.view_mut((0, n + m), (n, q)).copy_from(&to_na(&plant.e_c));
    let phi = expm(&(aug * period))?;
    Ok(DiscretePlant {
        a: from_na(&phi.view((0, 0), (n, n)).into_owned()),
        b: from_na(&phi.view((0, n), (n, m)).into_owned()),
        e_d: from_na(&phi.view((0, n + m), (n, q)).into_owned()),
        period,
        design: plant.design.clone(),
    })
}

impl DiscretePlant {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// `A x + B u + w`.
    pub fn step_nominal(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if x.len() != n {
            return Err(CcdError::dim("state", n, x.len()));
        }
        if u.len() != self.input_dim() {
            return Err(CcdError::dim("input", self.input_dim(), u.len()));
        }
        if w.len() != n {
            return Err(CcdError::dim("disturbance", n, w.len()));
        }
        Ok(self.step_unchecked(x, u, w))
    }

    #[inline]
    pub(crate) fn step_unchecked(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (a, xv) in self.a.row(i).iter().zip(x) {
                acc += a * xv;
            }
            for (b, uv) in self.b.row(i).iter().zip(u) {
                acc += b * uv;
            }
            *o = acc + w[i];
        }
        out
    }

    /// `E_d d` for a scalar exogenous signal `d`.
    pub fn disturbance(&self, d: f64) -> Vec<f64> {
        self.e_d.column(0).iter().map(|e| e * d).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_design() -> DesignParams {
        DesignParams::new(&[], &[], &[], &[]).unwrap()
    }

    #[test]
    fn zero_dynamics_integrate_input() {
        let plant = ContinuousPlant::new(
            Matrix::zeros(2, 2),
            Matrix::column_vector(&[1.0, 2.0]),
            Matrix::zeros(2, 1),
            no_design(),
        )
        .unwrap();
        let d = discretize_zoh(&plant, 0.05).unwrap();
        assert_eq!(d.a, Matrix::identity(2));
        assert_eq!(d.b.data(), &[0.05, 0.10]);
    }

    #[test]
    fn scalar_decay() {
        let plant = ContinuousPlant::new(
            Matrix::scalar(-1.0),
            Matrix::scalar(1.0),
            Matrix::scalar(0.0),
            no_design(),
        )
        .unwrap();
        let d = discretize_zoh(&plant, 0.5).unwrap();
        // Series oracle: sum_k (-0.5)^k / k!
        let mut term = 1.0;
        let mut series = 0.0;
        for k in 0..40 {
            series += term;
            term *= -0.5 / (k as f64 + 1.0);
        }
        assert!((d.a.item() - series).abs() < 1e-15);
        assert!((d.a.item() - 0.606531).abs() < 1e-6);
        assert!((d.b.item() - (1.0 - series)).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_period() {
        let plant = ContinuousPlant::new(
            Matrix::scalar(-1.0),
            Matrix::scalar(1.0),
            Matrix::scalar(0.0),
            no_design(),
        )
        .unwrap();
        assert!(discretize_zoh(&plant, 0.0).is_err());
    }

    #[test]
    fn step_dimension_checks() {
        let p = DiscretePlant {
            a: Matrix::identity(2),
            b: Matrix::column_vector(&[1.0, 1.0]),
            e_d: Matrix::zeros(2, 1),
            period: 1.0,
            design: no_design(),
        };
        assert!(p.step_nominal(&[1.0], &[0.0], &[0.0, 0.0]).is_err());
        assert!(p.step_nominal(&[1.0, 1.0], &[0.0], &[0.0]).is_err());
    }
}
