use serde::{Deserialize, Serialize};

use super::FieldError;

/// First-stability-region boundary for a pure RF drive.
pub const MATHIEU_Q_LIMIT: f64 = 0.908;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfDriveConfig {
    pub peak_to_peak_voltage_v: f64,
    pub drive_frequency_hz: f64,
    pub radial_half_aperture_m: f64,
    /// Geometric efficiency of the blade quadrupole relative to ideal hyperbolic electrodes.
    pub geometric_efficiency: f64,
}

impl Default for RfDriveConfig {
    fn default() -> Self {
        Self {
            peak_to_peak_voltage_v: 400.0,
            drive_frequency_hz: 12.155e6,
            radial_half_aperture_m: 1.0e-3,
            geometric_efficiency: super::axial::FROZEN_GEOMETRIC_EFFICIENCY,
        }
    }
}

impl RfDriveConfig {
    pub fn amplitude(&self) -> f64 {
        0.5 * self.peak_to_peak_voltage_v
    }

    pub fn angular_frequency(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.drive_frequency_hz
    }

    pub fn period(&self) -> f64 {
        1.0 / self.drive_frequency_hz
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let ok = self.peak_to_peak_voltage_v >= 0.0
            && self.drive_frequency_hz > 0.0
            && self.radial_half_aperture_m > 0.0
            && self.geometric_efficiency > 0.0
            && self.geometric_efficiency <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(FieldError::Invalid(format!("RF drive {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecularFrequencies {
    pub omega_ax: f64,
    pub omega_rad: f64,
    pub mathieu_q: f64,
}

fn q_of(rf: &RfDriveConfig, efficiency: f64, mass: f64, charge: f64) -> f64 {
    let w = rf.angular_frequency();
    2.0 * efficiency * charge.abs() * rf.amplitude()
        / (mass * rf.radial_half_aperture_m.powi(2) * w * w)
}

/// Radial pseudopotential frequency to lowest order in q, without dc offset.
/// `omega_ax` is left at zero; it comes from the axial model.
pub fn pseudopotential_params(
    rf: &RfDriveConfig,
    mass: f64,
    charge: f64,
) -> Result<SecularFrequencies, FieldError> {
    rf.validate()?;
    let q = q_of(rf, rf.geometric_efficiency, mass, charge);
    if q >= MATHIEU_Q_LIMIT {
        return Err(FieldError::Unstable { q });
    }
    Ok(SecularFrequencies {
        omega_ax: 0.0,
        omega_rad: rf.angular_frequency() * q / (2.0 * std::f64::consts::SQRT_2),
        mathieu_q: q,
    })
}

/// Efficiency that makes the pseudopotential frequency equal `target_omega_rad`.
pub fn calibrate_efficiency(
    rf: &RfDriveConfig,
    target_omega_rad: f64,
    mass: f64,
    charge: f64,
) -> Result<f64, FieldError> {
    let q_unit = q_of(rf, 1.0, mass, charge);
    if q_unit <= 0.0 {
        return Err(FieldError::Calibration("RF amplitude is zero".into()));
    }
    let q_target = 2.0 * std::f64::consts::SQRT_2 * target_omega_rad / rf.angular_frequency();
    let eta = q_target / q_unit;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(FieldError::Calibration(format!(
            "required efficiency {eta:.4} lies outside (0, 1]"
        )));
    }
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ca40_mass, ELEMENTARY_CHARGE};
    use std::f64::consts::PI;

    #[test]
    fn ideal_quadrupole_q() {
        let rf = RfDriveConfig {
            geometric_efficiency: 1.0,
            ..RfDriveConfig::default()
        };
        let p = pseudopotential_params(&rf, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
        // hand evaluation: 2 e 200 / (m (1e-3)^2 (2 pi 12.155e6)^2)
        let m = 39.9626 * 1.660_539_066_60e-27;
        let w = 2.0 * PI * 12.155e6;
        let q = 2.0 * 1.602_176_634e-19 * 200.0 / (m * 1e-6 * w * w);
        assert!((p.mathieu_q - q).abs() < 1e-12);
        assert!((p.mathieu_q - 0.166).abs() < 0.001);
    }

    #[test]
    fn calibration_hits_430_khz() {
        let target = 2.0 * PI * 430e3;
        let rf = RfDriveConfig::default();
        let eta = calibrate_efficiency(&rf, target, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
        assert!((eta - 0.60).abs() < 0.01, "eta = {eta}");
        let p = pseudopotential_params(
            &RfDriveConfig {
                geometric_efficiency: eta,
                ..rf
            },
            ca40_mass(),
            ELEMENTARY_CHARGE,
        )
        .unwrap();
        assert!((p.omega_rad - target).abs() < 1e-9 * target);
        let q_expected = 2.0 * 2f64.sqrt() * 430e3 / 12.155e6;
        assert!((p.mathieu_q - q_expected).abs() < 1e-12);
        assert!((p.mathieu_q - 0.100).abs() < 0.001);
    }

    #[test]
    fn zero_drive_gives_zero_frequency() {
        let rf = RfDriveConfig {
            peak_to_peak_voltage_v: 0.0,
            ..RfDriveConfig::default()
        };
        let p = pseudopotential_params(&rf, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
        assert_eq!(p.mathieu_q, 0.0);
        assert_eq!(p.omega_rad, 0.0);
    }

    #[test]
    fn unstable_drive_is_rejected() {
        let rf = RfDriveConfig {
            peak_to_peak_voltage_v: 4000.0,
            geometric_efficiency: 1.0,
            ..RfDriveConfig::default()
        };
        assert!(matches!(
            pseudopotential_params(&rf, ca40_mass(), ELEMENTARY_CHARGE),
            Err(FieldError::Unstable { .. })
        ));
    }
}
