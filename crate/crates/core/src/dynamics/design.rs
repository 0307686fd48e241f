use serde::{Deserialize, Serialize};

use crate::error::{CcdError, Result};

/// Named physical design parameters with box bounds.
///
/// Values are always kept inside their bounds; every mutation projects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    names: Vec<String>,
    values: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignParams {
    pub fn new(names: &[&str], values: &[f64], lower: &[f64], upper: &[f64]) -> Result<Self> {
        let n = names.len();
        for (what, len) in [("values", values.len()), ("lower", lower.len()), ("upper", upper.len())] {
            if len != n {
                return Err(CcdError::Config(format!(
                    "design {what} has {len} entries for {n} parameters"
                )));
            }
        }
        for i in 0..n {
            if !(lower[i] <= upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(CcdError::Config(format!(
                    "design bounds for {} are not ordered finite numbers",
                    names[i]
                )));
            }
        }
        let mut d = Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            values: values.to_vec(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        };
        d.project();
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        self.get(name)
            .ok_or_else(|| CcdError::Config(format!("design has no parameter named {name}")))
    }

    fn project(&mut self) {
        for i in 0..self.values.len() {
            self.values[i] = self.values[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "design length mismatch");
        self.values.copy_from_slice(values);
        self.project();
    }

    pub fn with_values(&self, values: &[f64]) -> Self {
        let mut d = self.clone();
        d.set_values(values);
        d
    }

    /// Coordinates in `[0, 1]` over the bounds (0.5 for a degenerate range).
    pub fn normalized(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let w = self.upper[i] - self.lower[i];
                if w > 0.0 {
                    (self.values[i] - self.lower[i]) / w
                } else {
                    0.5
                }
            })
            .collect()
    }

    /// Sets values from normalized coordinates, clamping them to `[0, 1]`.
    pub fn set_normalized(&mut self, z: &[f64]) {
        assert_eq!(z.len(), self.len(), "design length mismatch");
        for i in 0..self.len() {
            let zi = z[i].clamp(0.0, 1.0);
            self.values[i] = self.lower[i] + zi * (self.upper[i] - self.lower[i]);
        }
        self.project();
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}
