//! Equations of motion: integrators, thermal sampling, crystals, switching
//! waveforms and trigger timing.

mod crystal;
mod integrate;
mod langevin;
mod thermal;
mod trigger;

pub use crystal::{equilibrium_crystal, two_ion_spacing, AxialWell, CrystalOptions};
pub use integrate::{
    integrate, ExitRecord, ForceField, IntegrationOutput, IntegratorKind, IntegratorMetadata,
    StepControl, Trajectory,
};
pub use langevin::{BaoabLangevin, LangevinForces};
pub use thermal::{sample_thermal_ensemble, sample_thermal_state, HarmonicWell, ThermalSource};
pub use trigger::{trigger_and_waveform, SwitchShape, SwitchWaveform, TriggerModel};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ca40_mass, ELEMENTARY_CHARGE};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("step size underflow at t = {t:.6e} s (dt = {dt:.3e} s)")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("invalid ion state: {0}")]
    InvalidState(String),
    #[error("configuration is not bound: {0}")]
    Unbound(String),
    #[error("equilibrium search did not converge (gradient norm {gradient:.3e})")]
    NotConverged { gradient: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
    pub charge: f64,
}

impl IonState {
    pub fn new(position: Vec3, velocity: Vec3, mass: f64, charge: f64) -> Result<Self, DynamicsError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(DynamicsError::InvalidState(format!("mass {mass}")));
        }
        if !(charge != 0.0 && charge.is_finite()) {
            return Err(DynamicsError::InvalidState(format!("charge {charge}")));
        }
        Ok(Self {
            position,
            velocity,
            mass,
            charge,
        })
    }

    /// Singly charged calcium-40 at rest at `position`.
    pub fn calcium(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            mass: ca40_mass(),
            charge: ELEMENTARY_CHARGE,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.norm_squared()
    }
}
