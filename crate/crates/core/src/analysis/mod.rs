//! Knife-edge fits, spot statistics and time-of-flight kinematics.

mod erf_fit;
mod stats;

pub use erf_fit::{
    erf_model, fit_erf, ErfFitResult, FitMethod, FitOptions, Interval, IntervalMethod,
};
pub use stats::{containment_to_sigma, spot_stats, tof_to_energy, SpotStatistics};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("fit needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("fit did not converge after {iterations} iterations (deviance trace {trace:?})")]
    NotConverged { iterations: usize, trace: Vec<f64> },
    #[error("invalid scan table: {0}")]
    Table(#[from] crate::protocols::ScanTableError),
    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("insufficient data: need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },
}
