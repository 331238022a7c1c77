//! Experiment protocols built on the field and dynamics layers.

mod bank;
mod beamline;
mod calibration;
mod record;
mod reduction;
mod scan;
mod scans;

pub use beamline::{
    detection_draw, run_extraction, Beamline, BeamLineConfig, ExtractionConfig, ExtractionField,
    ExtractionRun, LensOutcome, LensSection, LossReason, LostIon, PlaneCrossing, TrapExit,
    TrapOutcome, TrapSection, FROZEN_LENS_POSITION_M,
};
pub use bank::{BeamBank, Shot, ShotSource};
pub use calibration::{
    calibrate_energy_scale, calibrate_lens_position, reference_energy_ev, virtual_source,
    LensCalibration, VirtualSource,
};
pub use record::ExtractionRecord;
pub use reduction::{run_reduction_ramp, PreparedRamp, RampConfig, ReductionOutcome, ReductionTrap, RemovedIon};
pub use scans::{
    chief_ray_at_lens, knife_edge_scan, pilot_blade_positions, run_aperture_alignment_scan,
    run_displacement_scan, run_focal_scan, run_knife_edge, AlignmentCell, AlignmentMap,
    DisplacementScan, FocalScan, KnifeEdgeOptions, SpotRow, PILOT_SAMPLE_BASE,
};
pub use scan::{ScanAxis, ScanRow, ScanTable, ScanTableError};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::dynamics::DynamicsError;
use crate::fields::FieldError;
use crate::geometry::GeometryError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Table(#[from] ScanTableError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}
