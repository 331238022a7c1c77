//! Simulation of a deterministic single-ion source: a segmented linear Paul
//! trap, phase-synchronised extraction, einzel-lens focusing solved with an
//! axisymmetric boundary-element method, and knife-edge spot analysis.

pub mod constants;
pub mod fields;
pub mod geometry;
pub mod numerics;
pub mod dynamics;
pub mod seeds;
pub mod protocols;
pub mod analysis;
pub mod config;
pub mod io;
