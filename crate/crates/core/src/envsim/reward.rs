use serde::{Deserialize, Serialize};

use crate::error::{CcdError, Result};

/// Negated quadratic stage cost `−x'ᵀQx' − r_u u² − Δeᵀ Q_q Δe`.
///
/// `Q` and `Q_q` are diagonal, which covers every plant here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub q_diag: Vec<f64>,
    pub r_u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_quantile_diag: Option<Vec<f64>>,
}

impl RewardSpec {
    pub fn new(q_diag: Vec<f64>, r_u: f64) -> Result<Self> {
        if q_diag.iter().any(|&q| !(q >= 0.0)) || !(r_u >= 0.0) {
            return Err(CcdError::Config("reward weights must be non-negative".into()));
        }
        Ok(Self {
            q_diag,
            r_u,
            q_quantile_diag: None,
        })
    }

    pub fn illustrative() -> Self {
        Self::new(vec![1.0, 1.0], 0.1).unwrap()
    }

    pub fn suspension() -> Self {
        Self::new(vec![10.0, 1.0, 50.0, 5.0], 1e-6).unwrap()
    }

    /// Adds the quantile-width penalty `Q_q = factor · Q`.
    pub fn with_quantile_penalty(mut self, factor: f64) -> Self {
        self.q_quantile_diag = Some(self.q_diag.iter().map(|q| q * factor).collect());
        self
    }

    pub fn state_dim(&self) -> usize {
        self.q_diag.len()
    }

    pub fn reward(&self, x_next: &[f64], u: f64, width: Option<&[f64]>) -> Result<f64> {
        if x_next.len() != self.q_diag.len() {
            return Err(CcdError::dim("reward state", self.q_diag.len(), x_next.len()));
        }
        match (&self.q_quantile_diag, width) {
            (Some(qq), Some(w)) if w.len() != qq.len() => {
                Err(CcdError::dim("reward quantile width", qq.len(), w.len()))
            }
            (Some(_), None) => Err(CcdError::Config(
                "quantile-width penalty configured but no width supplied".into(),
            )),
            (None, Some(_)) => Err(CcdError::Config(
                "quantile width supplied without a penalty matrix".into(),
            )),
            _ => Ok(self.reward_unchecked(x_next, u, width)),
        }
    }

    #[inline]
    pub(crate) fn reward_unchecked(&self, x_next: &[f64], u: f64, width: Option<&[f64]>) -> f64 {
        let mut cost = 0.0;
        for (q, x) in self.q_diag.iter().zip(x_next) {
            cost += q * x * x;
        }
        cost += self.r_u * u * u;
        if let (Some(qq), Some(w)) = (&self.q_quantile_diag, width) {
            for (q, d) in qq.iter().zip(w) {
                cost += q * d * d;
            }
        }
        -cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let r = RewardSpec::illustrative();
        assert_eq!(r.reward(&[1.0, 1.0], 0.0, None).unwrap(), -2.0);
        assert_eq!(r.reward(&[0.0, 0.0], 1.0, None).unwrap(), -0.1);
        let rq = RewardSpec::illustrative().with_quantile_penalty(0.1);
        assert!((rq.reward(&[0.0, 0.0], 0.0, Some(&[1.0, 1.0])).unwrap() + 0.2).abs() < 1e-15);
        let s = RewardSpec::suspension();
        assert!((s.reward(&[0.0, 0.0, 0.1, 0.0], 0.0, None).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_at_origin_and_collapsed_band() {
        let rq = RewardSpec::suspension().with_quantile_penalty(0.1);
        assert_eq!(rq.reward(&[0.0; 4], 0.0, Some(&[0.0; 4])).unwrap(), 0.0);
    }

    #[test]
    fn width_presence_must_match() {
        let r = RewardSpec::illustrative();
        assert!(r.reward(&[0.0, 0.0], 0.0, Some(&[1.0, 1.0])).is_err());
        let rq = r.with_quantile_penalty(0.1);
        assert!(rq.reward(&[0.0, 0.0], 0.0, None).is_err());
    }

    proptest! {
        #[test]
        fn non_positive_and_sign_symmetric(x1 in -10.0f64..10.0, x2 in -10.0f64..10.0, u in -5.0f64..5.0) {
            let r = RewardSpec::illustrative();
            let a = r.reward(&[x1, x2], u, None).unwrap();
            let b = r.reward(&[x1, x2], -u, None).unwrap();
            prop_assert!(a <= 0.0);
            prop_assert_eq!(a, b);
        }
    }
}
