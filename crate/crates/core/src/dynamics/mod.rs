//! Plant models: continuous and discrete state space, zero-order-hold
//! discretization, and the hidden truth plants used for deployment.

mod design;
pub mod illustrative;
mod plant;
pub mod suspension;

use serde::{Deserialize, Serialize};

pub use design::DesignParams;
pub use illustrative::{IllustrativeConfig, IllustrativeTruthConfig, TruthDraws};
pub use plant::{discretize_zoh, ContinuousPlant, DiscretePlant};
pub use suspension::{NonlinearSign, Row2Col3, SuspensionConfig, SuspensionTruthConfig, TruthStep};

use crate::error::Result;
use crate::tensorgrad::Matrix;

/// Which plant an experiment runs on, with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PlantSpec {
    Illustrative(IllustrativeConfig),
    Suspension(SuspensionConfig),
}

impl PlantSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PlantSpec::Illustrative(_) => "illustrative",
            PlantSpec::Suspension(_) => "suspension",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            PlantSpec::Illustrative(_) => 2,
            PlantSpec::Suspension(_) => 4,
        }
    }

    pub fn initial_design(&self) -> Result<DesignParams> {
        match self {
            PlantSpec::Illustrative(c) => c.design(),
            PlantSpec::Suspension(c) => c.design(),
        }
    }

    pub fn nominal(&self, design: &DesignParams) -> Result<DiscretePlant> {
        match self {
            PlantSpec::Illustrative(c) => c.discrete(design),
            PlantSpec::Suspension(c) => c.discrete(design),
        }
    }

    pub fn state_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            PlantSpec::Illustrative(c) => (c.state_lower.to_vec(), c.state_upper.to_vec()),
            PlantSpec::Suspension(c) => (c.state_lower.to_vec(), c.state_upper.to_vec()),
        }
    }

    pub fn input_bounds(&self) -> (f64, f64) {
        match self {
            PlantSpec::Illustrative(c) => (c.input_bounds[0], c.input_bounds[1]),
            PlantSpec::Suspension(c) => (c.input_bounds[0], c.input_bounds[1]),
        }
    }

    /// Derivatives of `(A, B)` with respect to each design parameter, by
    /// central differences with a step relative to the parameter's range.
    pub fn design_jacobian(&self, design: &DesignParams) -> Result<Vec<(Matrix, Matrix)>> {
        let widths = design.widths();
        let mut out = Vec::with_capacity(design.len());
        for i in 0..design.len() {
            let h = 1e-4 * widths[i].max(f64::EPSILON);
            let mut plus = design.values().to_vec();
            let mut minus = design.values().to_vec();
            plus[i] += h;
            minus[i] -= h;
            // Unprojected so the stencil stays symmetric at the bounds.
            let dp = DesignParams::new(
                &design.names().iter().map(String::as_str).collect::<Vec<_>>(),
                &plus,
                &plus,
                &plus,
            )?;
            let dm = DesignParams::new(
                &design.names().iter().map(String::as_str).collect::<Vec<_>>(),
                &minus,
                &minus,
                &minus,
            )?;
            let pp = self.nominal(&dp)?;
            let pm = self.nominal(&dm)?;
            let da = pp.a.zip_map(&pm.a, |a, b| (a - b) / (2.0 * h));
            let db = pp.b.zip_map(&pm.b, |a, b| (a - b) / (2.0 * h));
            out.push((da, db));
        }
        Ok(out)
    }
}
