use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DynamicsError, IonState, Vec3};
use crate::constants::BOLTZMANN;
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalSource {
    pub temperature_k: f64,
    /// Laser-cooling friction coefficient (1/s).
    pub damping_rate_per_s: f64,
}

impl Default for ThermalSource {
    fn default() -> Self {
        Self {
            temperature_k: 2e-3,
            damping_rate_per_s: 2e4,
        }
    }
}

/// Local harmonic approximation of a trap: angular frequencies per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicWell {
    pub omega: Vec3,
    pub center: Vec3,
}

/// Boltzmann samples of position and velocity in the harmonic well. Sample
/// `i` draws from its own stream so results do not depend on batching.
pub fn sample_thermal_ensemble(
    source: &ThermalSource,
    well: &HarmonicWell,
    n_samples: usize,
    seed: u64,
    mass: f64,
    charge: f64,
) -> Result<Vec<IonState>, DynamicsError> {
    if !(source.temperature_k >= 0.0) {
        return Err(DynamicsError::Invalid(format!(
            "temperature {} K",
            source.temperature_k
        )));
    }
    if well.omega.iter().any(|&w| !(w > 0.0)) {
        return Err(DynamicsError::Invalid(format!(
            "well frequencies must be positive: {:?}",
            well.omega
        )));
    }
    (0..n_samples)
        .map(|i| sample_thermal_state(source, well, seed, i as u64, mass, charge))
        .collect()
}

/// Sample `index` of the ensemble drawn by [`sample_thermal_ensemble`] with the
/// same seed, generated on its own.
pub fn sample_thermal_state(
    source: &ThermalSource,
    well: &HarmonicWell,
    seed: u64,
    index: u64,
    mass: f64,
    charge: f64,
) -> Result<IonState, DynamicsError> {
    let sigma_v = (BOLTZMANN * source.temperature_k.max(0.0) / mass).sqrt();
    let mut rng = rng_for(seed, &[0x7448, index]);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = Vec3::zeros();
    let mut v = Vec3::zeros();
    for k in 0..3 {
        x[k] = well.center[k] + sigma_v / well.omega[k] * draw();
    }
    for k in 0..3 {
        v[k] = sigma_v * draw();
    }
    IonState::new(x, v, mass, charge)
}
