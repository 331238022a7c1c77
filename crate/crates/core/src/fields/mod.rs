//! Electrostatics: axisymmetric BEM for the lens, a calibrated segment basis
//! for the trap's axial potential, and RF pseudopotential parameters.

mod axial;
mod bem;
pub mod elliptic;
mod lens_map;
mod rf;
pub mod ring;

pub use axial::{
    axial_potential_profile, calibrate_axial, default_profile_samples, AxialCalibration,
    AxialPotentialModel, AxialProfile, AxialTargets, SegmentBasis, SegmentVoltages, WellReport,
    ZoneCoupling,
};
pub use bem::{
    collocation_matrix, eval_potential_and_field, filament_kernel_matrix, solve_axisymmetric_bem,
    BemOptions, ChargeSolution, SolvedPanel,
};
pub use lens_map::{LensFieldMap, LensMapOptions};
pub use rf::{calibrate_efficiency, pseudopotential_params, RfDriveConfig, SecularFrequencies};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("collocation matrix is singular")]
    Singular,
    #[error("collocation matrix is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    NotConverged { residual: f64, tolerance: f64 },
    #[error("no voltage assigned to terminal '{0}'")]
    MissingVoltage(String),
    #[error("electrode set has no rings")]
    EmptyGeometry,
    #[error("evaluation point (r = {r}, z = {z}) lies on a charged ring")]
    OnSurface { r: f64, z: f64 },
    #[error("RF drive is unstable: q = {q:.4} >= 0.908")]
    Unstable { q: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}
