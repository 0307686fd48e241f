//! Two-state unstable benchmark plant with a scalar design parameter `p`
//! entering the input matrix, and its hidden "truth" counterpart.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::design::DesignParams;
use super::plant::DiscretePlant;
use crate::error::Result;
use crate::tensorgrad::Matrix;

pub const A: [[f64; 2]; 2] = [[0.8, 0.5], [0.5, 0.6]];
pub const B_FIXED: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IllustrativeConfig {
    pub p_initial: f64,
    pub p_bounds: [f64; 2],
    pub state_lower: [f64; 2],
    pub state_upper: [f64; 2],
    pub input_bounds: [f64; 2],
    /// Standard deviations of the assumed Gaussian process noise.
    pub noise_std: [f64; 2],
    pub truth: IllustrativeTruthConfig,
}

impl Default for IllustrativeConfig {
    fn default() -> Self {
        Self {
            p_initial: 1.0,
            p_bounds: [0.5, 2.0],
            state_lower: [-10.0, -5.0],
            state_upper: [5.0, 2.0],
            input_bounds: [-1.0, 1.0],
            noise_std: [0.1, 0.2],
            truth: IllustrativeTruthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IllustrativeTruthConfig {
    pub bias: [f64; 2],
    pub uniform_halfwidth: [f64; 2],
    pub gaussian_noise: bool,
    pub state_nonlinearity: bool,
    pub input_nonlinearity: bool,
}

impl Default for IllustrativeTruthConfig {
    fn default() -> Self {
        Self {
            bias: [0.1, -0.2],
            uniform_halfwidth: [0.1, 0.1],
            gaussian_noise: true,
            state_nonlinearity: true,
            input_nonlinearity: true,
        }
    }
}

impl IllustrativeTruthConfig {
    /// All gap terms off: the truth plant reduces to the nominal model.
    pub fn disabled() -> Self {
        Self {
            bias: [0.0, 0.0],
            uniform_halfwidth: [0.0, 0.0],
            gaussian_noise: false,
            state_nonlinearity: false,
            input_nonlinearity: false,
        }
    }
}

impl IllustrativeConfig {
    pub fn design(&self) -> Result<DesignParams> {
        DesignParams::new(
            &["p"],
            &[self.p_initial],
            &[self.p_bounds[0]],
            &[self.p_bounds[1]],
        )
    }

    pub fn discrete(&self, design: &DesignParams) -> Result<DiscretePlant> {
        let p = design.value("p")?;
        Ok(DiscretePlant {
            a: Matrix::from_rows(&[A[0].to_vec(), A[1].to_vec()]),
            b: Matrix::column_vector(&[B_FIXED, p]),
            e_d: Matrix::zeros(2, 1),
            period: 1.0,
            design: design.clone(),
        })
    }

    /// Draws the nominal Gaussian disturbance `w_k`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let mut w = [0.0; 2];
        for (wi, &s) in w.iter_mut().zip(&self.noise_std) {
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
            *wi = s * z;
        }
        w
    }
}

/// Random quantities entering one truth step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TruthDraws {
    /// Gaussian process noise.
    pub w: [f64; 2],
    /// Uniform disturbance, already scaled to its half-width.
    pub uniform: [f64; 2],
}

impl IllustrativeTruthConfig {
    pub fn draw<R: Rng + ?Sized>(&self, nominal: &IllustrativeConfig, rng: &mut R) -> TruthDraws {
        let w = if self.gaussian_noise {
            nominal.sample_noise(rng)
        } else {
            [0.0; 2]
        };
        let mut uniform = [0.0; 2];
        for (ui, &h) in uniform.iter_mut().zip(&self.uniform_halfwidth) {
            let r: f64 = rng.gen_range(-1.0..=1.0);
            *ui = h * r;
        }
        TruthDraws { w, uniform }
    }

    /// Truth transition for given random draws.
    pub fn step_with(&self, x: &[f64], u: f64, p: f64, draws: &TruthDraws) -> [f64; 2] {
        let (x1, x2) = (x[0], x[1]);
        let mut next = [
            A[0][0] * x1 + A[0][1] * x2 + B_FIXED * u,
            A[1][0] * x1 + A[1][1] * x2 + p * u,
        ];
        for i in 0..2 {
            next[i] += draws.w[i] + self.bias[i] + draws.uniform[i];
        }
        if self.state_nonlinearity {
            next[0] += 0.1 * x1.sin() * x1 + 0.1 * x2.cos() * x2;
            next[1] += 0.1 * x1.cos() * x1 + 0.1 * x2.sin() * x2;
        }
        if self.input_nonlinearity {
            next[0] += 0.5 * x1.sin() * u;
            next[1] += 0.5 * p * x2.cos() * u;
        }
        next
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        nominal: &IllustrativeConfig,
        x: &[f64],
        u: f64,
        p: f64,
        rng: &mut R,
    ) -> [f64; 2] {
        let draws = self.draw(nominal, rng);
        self.step_with(x, u, p, &draws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spectral_radius, to_na};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plant(p: f64) -> DiscretePlant {
        let cfg = IllustrativeConfig::default();
        let d = cfg.design().unwrap().with_values(&[p]);
        cfg.discrete(&d).unwrap()
    }

    #[test]
    fn nominal_examples() {
        let p1 = plant(1.0);
        assert_eq!(p1.step_nominal(&[1.0, 0.0], &[0.0], &[0.0, 0.0]).unwrap(), vec![0.8, 0.5]);
        let p2 = plant(2.0);
        assert_eq!(p2.step_nominal(&[0.0, 0.0], &[1.0], &[0.0, 0.0]).unwrap(), vec![0.5, 2.0]);
        let x = p1.step_nominal(&[1.0, 1.0], &[1.0], &[0.1, 0.2]).unwrap();
        assert!((x[0] - 1.9).abs() < 1e-12 && (x[1] - 2.3).abs() < 1e-12);
    }

    #[test]
    fn open_loop_unstable() {
        assert!(spectral_radius(&to_na(&plant(1.0).a)) > 1.0);
    }

    #[test]
    fn truth_at_origin_is_bias() {
        let t = IllustrativeTruthConfig::default();
        let x = t.step_with(&[0.0, 0.0], 0.0, 1.0, &TruthDraws::default());
        assert_eq!(x, [0.1, -0.2]);
    }

    #[test]
    fn truth_unit_input_example() {
        let t = IllustrativeTruthConfig::default();
        let x = t.step_with(&[0.0, 0.0], 1.0, 1.0, &TruthDraws::default());
        assert!((x[0] - 0.6).abs() < 1e-15 && (x[1] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn disabled_truth_equals_nominal() {
        let cfg = IllustrativeConfig::default();
        let t = IllustrativeTruthConfig::disabled();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = [rng.gen_range(-10.0..5.0), rng.gen_range(-5.0..2.0)];
            let u = rng.gen_range(-1.0..1.0);
            let p = rng.gen_range(0.5..2.0);
            let truth = t.step(&cfg, &x, u, p, &mut rng);
            let nominal = plant(p).step_nominal(&x, &[u], &[0.0, 0.0]).unwrap();
            assert!((truth[0] - nominal[0]).abs() <= 1e-12);
            assert!((truth[1] - nominal[1]).abs() <= 1e-12);
        }
    }
}
