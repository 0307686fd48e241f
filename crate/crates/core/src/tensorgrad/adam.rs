use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

/// Bias-corrected adaptive-moment optimizer state for a fixed parameter list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing was changed.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn for_params(params: &[&Matrix]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> StepOutcome {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        if !grads.iter().all(Matrix::all_finite) {
            return StepOutcome::SkippedNonFinite;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad(x: &Matrix) -> Matrix {
        x.scale(2.0)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut x = Matrix::row_vector(&[1.0, -2.0]);
        let mut adam = Adam::for_params(&[&x]);
        let g = Matrix::zeros(1, 2);
        adam.step(&mut [&mut x], &[g], 0.1);
        assert_eq!(x.data(), &[1.0, -2.0]);
    }

    #[test]
    fn one_step_descends() {
        let mut x = Matrix::scalar(1.0);
        let mut adam = Adam::for_params(&[&x]);
        let g = grad(&x);
        adam.step(&mut [&mut x], &[g], 0.01);
        assert!(x.item() < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = sum_i c_i x_i^2, optimum at the origin.
        let c = [1.0, 3.0, 0.5];
        let mut x = Matrix::row_vector(&[1.0, -0.5, 2.0]);
        let mut adam = Adam::for_params(&[&x]);
        let gradient = |x: &Matrix| {
            Matrix::row_vector(&[
                2.0 * c[0] * x[(0, 0)],
                2.0 * c[1] * x[(0, 1)],
                2.0 * c[2] * x[(0, 2)],
            ])
        };
        for _ in 0..200 {
            let g = gradient(&x);
            adam.step(&mut [&mut x], &[g], 0.05);
        }
        let g = gradient(&x);
        let norm = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm}");
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut x = Matrix::scalar(1.0);
        let mut adam = Adam::for_params(&[&x]);
        let out = adam.step(&mut [&mut x], &[Matrix::scalar(f64::NAN)], 0.1);
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(x.item(), 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }
}
