//! Quarter-car active suspension.
//!
//! State: `[z_us − z0, ż_us, z_s − z_us, ż_s]`; input: actuator force (N);
//! exogenous signal: road elevation rate `ż0` (m/s).

use serde::{Deserialize, Serialize};

use super::design::DesignParams;
use super::plant::{discretize_zoh, ContinuousPlant, DiscretePlant};
use crate::error::{CcdError, Result};
use crate::tensorgrad::Matrix;

/// Entry (2, 3) of `A_c`: the printed form uses the tire stiffness, the
/// Newtonian derivation uses the suspension spring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Row2Col3 {
    Printed,
    Physical,
}

/// Sign convention of the nonlinear spring/damper force in the truth plant.
/// `Printed` subtracts it on the unsprung mass and adds it on the sprung mass;
/// `Physical` applies it as a restoring force on the sprung mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearSign {
    Printed,
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuspensionConfig {
    /// Sprung mass (kg).
    pub m_s: f64,
    /// Unsprung mass (kg).
    pub m_us: f64,
    /// Tire stiffness (N/m).
    pub k_t: f64,
    /// Tire damping (N·s/m).
    pub c_t: f64,
    /// Initial spring stiffness (N/m).
    pub k_s: f64,
    /// Initial damper coefficient (N·s/m).
    pub c_s: f64,
    /// Design bounds as multiples of the initial values.
    pub design_scale: [f64; 2],
    /// Sampling period (s).
    pub period: f64,
    pub row2_col3: Row2Col3,
    pub state_lower: [f64; 4],
    pub state_upper: [f64; 4],
    /// Actuator force limits (N).
    pub input_bounds: [f64; 2],
    /// Standard deviation of the assumed `ż0` (m/s) used before deployment.
    pub road_rate_std: f64,
    pub truth: SuspensionTruthConfig,
}

impl Default for SuspensionConfig {
    fn default() -> Self {
        Self {
            m_s: 325.0,
            m_us: 65.0,
            k_t: 232_500.0,
            c_t: 1897.0,
            k_s: 27692.0,
            c_s: 1906.5,
            design_scale: [0.5, 1.5],
            period: 0.05,
            row2_col3: Row2Col3::Printed,
            state_lower: [-0.5, -2.0, -0.2, -1.0],
            state_upper: [0.5, 2.0, 0.2, 1.0],
            input_bounds: [-2500.0, 2500.0],
            road_rate_std: 0.3,
            truth: SuspensionTruthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuspensionTruthConfig {
    /// `k_nl = ratio · k_s`.
    pub spring_ratio: f64,
    /// `c_nl = ratio · c_s`.
    pub damper_ratio: f64,
    pub sign: NonlinearSign,
    /// RK4 substeps per sampling period.
    pub substeps: usize,
    /// Any state entry above this magnitude ends the episode.
    pub blowup_bound: f64,
}

impl Default for SuspensionTruthConfig {
    fn default() -> Self {
        Self {
            spring_ratio: 0.01,
            damper_ratio: 0.01,
            sign: NonlinearSign::Printed,
            substeps: 10,
            blowup_bound: 1e6,
        }
    }
}

impl SuspensionConfig {
    pub fn design(&self) -> Result<DesignParams> {
        let [lo, hi] = self.design_scale;
        DesignParams::new(
            &["k_s", "c_s"],
            &[self.k_s, self.c_s],
            &[lo * self.k_s, lo * self.c_s],
            &[hi * self.k_s, hi * self.c_s],
        )
    }

    pub fn continuous(&self, design: &DesignParams) -> Result<ContinuousPlant> {
        if !(self.m_s > 0.0 && self.m_us > 0.0) {
            return Err(CcdError::Config("suspension masses must be positive".into()));
        }
        let k_s = design.value("k_s")?;
        let c_s = design.value("c_s")?;
        let (m_s, m_us, k_t, c_t) = (self.m_s, self.m_us, self.k_t, self.c_t);
        let a23 = match self.row2_col3 {
            Row2Col3::Printed => k_t / m_us,
            Row2Col3::Physical => k_s / m_us,
        };
        let a_c = Matrix::from_rows(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![-k_t / m_us, -c_s / m_us, a23, c_s / m_us],
            vec![0.0, -1.0, 0.0, 1.0],
            vec![0.0, c_s / m_s, -k_s / m_s, -c_s / m_s],
        ]);
        let b_c = Matrix::column_vector(&[0.0, -1.0 / m_us, 0.0, 1.0 / m_s]);
        let e_c = Matrix::column_vector(&[-1.0, c_t / m_us, 0.0, 0.0]);
        ContinuousPlant::new(a_c, b_c, e_c, design.clone())
    }

    pub fn discrete(&self, design: &DesignParams) -> Result<DiscretePlant> {
        discretize_zoh(&self.continuous(design)?, self.period)
    }
}

/// Outcome of one truth-plant sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthStep {
    pub x: Vec<f64>,
    pub blown_up: bool,
}

impl SuspensionTruthConfig {
    /// Spring/damper nonlinearity contribution to `ẋ`.
    pub fn nonlinear_term(&self, plant: &ContinuousPlant, cfg: &SuspensionConfig, x: &[f64]) -> Result<[f64; 4]> {
        let k_nl = self.spring_ratio * plant.design.value("k_s")?;
        let c_nl = self.damper_ratio * plant.design.value("c_s")?;
        let rel = x[3] - x[1];
        let force = k_nl * x[2].powi(3) + c_nl * rel.abs() * rel;
        Ok(match self.sign {
            NonlinearSign::Printed => [0.0, -force / cfg.m_us, 0.0, force / cfg.m_s],
            NonlinearSign::Physical => [0.0, force / cfg.m_us, 0.0, -force / cfg.m_s],
        })
    }

    /// Continuous truth dynamics `ẋ`.
    pub fn derivative(
        &self,
        plant: &ContinuousPlant,
        cfg: &SuspensionConfig,
        x: &[f64],
        u: f64,
        road_rate: f64,
    ) -> Result<Vec<f64>> {
        let mut dx = plant.derivative(x, &[u], &[road_rate]);
        let nl = self.nonlinear_term(plant, cfg, x)?;
        for (d, n) in dx.iter_mut().zip(nl) {
            *d += n;
        }
        Ok(dx)
    }

    /// Integrates one sampling period with classical RK4, holding `u` and
    /// `ż0` constant.
    pub fn step(
        &self,
        plant: &ContinuousPlant,
        cfg: &SuspensionConfig,
        x: &[f64],
        u: f64,
        road_rate: f64,
    ) -> Result<TruthStep> {
        if self.substeps == 0 {
            return Err(CcdError::Config("truth substeps must be positive".into()));
        }
        let h = cfg.period / self.substeps as f64;
        let mut s = x.to_vec();
        let axpy = |s: &[f64], k: &[f64], c: f64| -> Vec<f64> {
            s.iter().zip(k).map(|(a, b)| a + c * b).collect()
        };
        for _ in 0..self.substeps {
            let k1 = self.derivative(plant, cfg, &s, u, road_rate)?;
            let k2 = self.derivative(plant, cfg, &axpy(&s, &k1, 0.5 * h), u, road_rate)?;
            let k3 = self.derivative(plant, cfg, &axpy(&s, &k2, 0.5 * h), u, road_rate)?;
            let k4 = self.derivative(plant, cfg, &axpy(&s, &k3, h), u, road_rate)?;
            for i in 0..s.len() {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if s.iter().any(|v| !v.is_finite() || v.abs() > self.blowup_bound) {
                return Ok(TruthStep { x: s, blown_up: true });
            }
        }
        Ok(TruthStep { x: s, blown_up: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_stays_put() {
        let cfg = SuspensionConfig::default();
        let plant = cfg.continuous(&cfg.design().unwrap()).unwrap();
        let out = cfg.truth.step(&plant, &cfg, &[0.0; 4], 0.0, 0.0).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
        assert!(!out.blown_up);
    }

    #[test]
    fn spring_deflection_acceleration() {
        let mut cfg = SuspensionConfig::default();
        cfg.truth.sign = NonlinearSign::Physical;
        let design = cfg.design().unwrap();
        let plant = cfg.continuous(&design).unwrap();
        let dx = cfg
            .truth
            .derivative(&plant, &cfg, &[0.0, 0.0, 0.1, 0.0], 0.0, 0.0)
            .unwrap();
        let k_nl = 0.01 * cfg.k_s;
        let expected = -(cfg.k_s * 0.1 + k_nl * 0.001) / cfg.m_s;
        assert!((dx[3] - expected).abs() < 1e-12 * expected.abs());

        cfg.truth.sign = NonlinearSign::Printed;
        let dx = cfg
            .truth
            .derivative(&plant, &cfg, &[0.0, 0.0, 0.1, 0.0], 0.0, 0.0)
            .unwrap();
        let expected = (-cfg.k_s * 0.1 + k_nl * 0.001) / cfg.m_s;
        assert!((dx[3] - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn row2_col3_switch() {
        let mut cfg = SuspensionConfig::default();
        let d = cfg.design().unwrap();
        let printed = cfg.continuous(&d).unwrap();
        assert_eq!(printed.a_c[(1, 2)], cfg.k_t / cfg.m_us);
        cfg.row2_col3 = Row2Col3::Physical;
        let physical = cfg.continuous(&d).unwrap();
        assert_eq!(physical.a_c[(1, 2)], cfg.k_s / cfg.m_us);
    }

    #[test]
    fn blowup_is_flagged() {
        let mut cfg = SuspensionConfig::default();
        cfg.truth.blowup_bound = 1.0;
        let plant = cfg.continuous(&cfg.design().unwrap()).unwrap();
        let out = cfg.truth.step(&plant, &cfg, &[0.0, 0.9, 0.0, 0.0], 0.0, 50.0).unwrap();
        assert!(out.blown_up);
    }
}
