//! Electrode layouts for the segmented trap and the einzel lens.

mod lens;
mod trap;

pub use lens::{
    build_lens_geometry, AxisymmetricElectrodeSet, Electrode, LensConfig, Panel,
    LENS_SCHEMA_VERSION,
};
pub use trap::{build_trap_geometry, Segment, TrapGeometry, TrapLayoutConfig, TrapZone};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: String, value: f64 },
    #[error("segment {first} overlaps segment {second}")]
    SegmentOverlap { first: usize, second: usize },
    #[error("expected {expected} segments, found {found}")]
    SegmentCount { expected: usize, found: usize },
    #[error("razor plane ({razor} m) must lie before the detector plane ({detector} m)")]
    PlaneOrder { razor: f64, detector: f64 },
    #[error("reference segment {0} does not exist")]
    UnknownReference(usize),
    #[error("discretization density must be at least 1 ring per mm, got {0}")]
    Density(f64),
    #[error("non-physical lens dimensions: {0}")]
    Lens(String),
}

pub(crate) fn require_positive(what: &str, value: f64) -> Result<(), GeometryError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NonPositive {
            what: what.to_string(),
            value,
        })
    }
}
