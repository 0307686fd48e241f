//! Quantile-regression model of the gap between the nominal plant and the
//! deployed system.

mod dataset;
mod model;

pub use dataset::{build_residuals, ResidualDataset, ResidualMode, ResidualRecord};
pub use model::{
    evaluate_quantiles, fit, pinball_loss, rearrange, FitReport, QuantileBatch, QuantileConfig,
    QuantileDocument, QuantileMetrics, QuantileModel, QuantilePrediction, QUANTILE_FORMAT,
    QUANTILE_LEVELS,
};
