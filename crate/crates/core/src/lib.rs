//! Multi-generation control co-design: PPO with the physical design as a
//! differentiable input, digital-twin model updating from deployment
//! residuals, and quantile-regression uncertainty penalties.

pub mod config;
pub mod discrepancy;
pub mod dynamics;
pub mod envsim;
pub mod error;
pub mod lifecycle;
pub mod linalg;
pub mod ppo;
pub mod pretrain;
pub mod profiles;
pub mod report;
pub mod tensorgrad;

pub use error::{CcdError, Result};
