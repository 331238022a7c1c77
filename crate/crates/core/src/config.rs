//! Run configuration: one TOML document with a section per subsystem, plus
//! the setup builder that turns it into a ready beam line.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::FitOptions;
use crate::constants::{ca40_mass, ELEMENTARY_CHARGE};
use crate::dynamics::{SwitchWaveform, ThermalSource, TriggerModel};
use crate::fields::{
    pseudopotential_params, solve_axisymmetric_bem, AxialCalibration, AxialPotentialModel, AxialTargets,
    BemOptions, ChargeSolution, LensFieldMap, LensMapOptions, RfDriveConfig,
};
use crate::geometry::{build_lens_geometry, build_trap_geometry, AxisymmetricElectrodeSet, LensConfig, TrapGeometry, TrapLayoutConfig};
use crate::protocols::{
    Beamline, BeamLineConfig, ExtractionConfig, KnifeEdgeOptions, ProtocolError, RampConfig, ReductionTrap,
    ShotSource,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("override `{0}`: expected key.path=value")]
    Override(String),
    #[error("override `{key}`: {reason}")]
    OverridePath { key: String, reason: String },
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensSolverConfig {
    pub rings_per_mm: f64,
    pub bem: BemOptions,
    pub map: LensMapOptions,
}

impl Default for LensSolverConfig {
    fn default() -> Self {
        Self {
            rings_per_mm: 10.0,
            bem: BemOptions::default(),
            map: LensMapOptions::default(),
        }
    }
}

/// Targets for the `calibrate` subcommand beyond the axial ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationTargets {
    pub radial_frequency_hz: f64,
    pub exit_energy_ev: f64,
    /// Also fit the extraction energy scale (otherwise it is left as configured).
    pub fit_energy_scale: bool,
    pub loading_falloff_ratio: f64,
    /// Shots used to locate the virtual source for the lens position.
    pub lens_shots: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            radial_frequency_hz: 430e3,
            exit_energy_ev: 80.0,
            fit_energy_scale: false,
            loading_falloff_ratio: 2.0,
            lens_shots: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub extract_shots: usize,
    pub focal_voltages_v: Vec<f64>,
    pub displacements_m: Vec<f64>,
    pub displacement_temperatures_k: Vec<f64>,
    /// Deflection applied while displacing the beam; empty disables it.
    pub displacement_deflection_v: Vec<f64>,
    pub alignment_grid_x_v: Vec<f64>,
    pub alignment_grid_y_v: Vec<f64>,
    pub alignment_shots: u32,
    pub alignment_aperture_radius_m: f64,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            extract_shots: 2000,
            focal_voltages_v: linspace(120.0, 180.0, 7),
            displacements_m: linspace(0.0, 0.5e-3, 6),
            displacement_temperatures_k: vec![2e-3],
            displacement_deflection_v: vec![0.01, 0.0],
            alignment_grid_x_v: linspace(-0.4, 0.4, 17),
            alignment_grid_y_v: linspace(-0.4, 0.4, 17),
            alignment_shots: 20,
            alignment_aperture_radius_m: 0.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub ramp: RampConfig,
    pub ion_counts: Vec<usize>,
    pub trials: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            ramp: RampConfig::default(),
            ion_counts: vec![1, 2, 3, 4, 5],
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub trap: TrapLayoutConfig,
    pub axial: AxialCalibration,
    pub axial_targets: AxialTargets,
    pub rf: RfDriveConfig,
    pub calibration: CalibrationTargets,
    pub lens: LensConfig,
    pub lens_solver: LensSolverConfig,
    pub extraction: ExtractionConfig,
    pub beamline: BeamLineConfig,
    pub source: ThermalSource,
    pub trigger: TriggerModel,
    pub waveform: SwitchWaveform,
    pub knife_edge: KnifeEdgeOptions,
    pub fit: FitOptions,
    pub scans: ScanConfig,
    pub reduction: ReductionConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trap: TrapLayoutConfig::default(),
            axial: AxialCalibration::default(),
            axial_targets: AxialTargets::default(),
            rf: RfDriveConfig::default(),
            calibration: CalibrationTargets::default(),
            lens: LensConfig::default(),
            lens_solver: LensSolverConfig::default(),
            extraction: ExtractionConfig::default(),
            beamline: BeamLineConfig::default(),
            source: ThermalSource::default(),
            trigger: TriggerModel::default(),
            waveform: SwitchWaveform::default(),
            knife_edge: KnifeEdgeOptions::default(),
            fit: FitOptions::default(),
            scans: ScanConfig::default(),
            reduction: ReductionConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Parse a scalar override value as TOML, falling back to a bare string.
fn parse_override_value(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(text.into())),
        Err(_) => toml::Value::String(text.into()),
    }
}

fn merge(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

/// Apply `a.b.c=value` to a TOML tree, creating intermediate tables.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let mut node = root;
    for part in &path[..path.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            key: key.into(),
            reason: format!("`{part}` is inside a non-table value"),
        })?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
        key: key.into(),
        reason: "parent is not a table".into(),
    })?;
    table.insert(path[path.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Resolve a config from file text (may be empty) and `key=value`
    /// overrides, which take precedence over the file.
    pub fn resolve(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::resolve_layers(&[("config", text)], overrides)
    }

    /// Merge `(name, text)` layers in order, later layers winning key by key,
    /// then apply overrides.
    pub fn resolve_layers(layers: &[(&str, &str)], overrides: &[String]) -> Result<Self, ConfigError> {
        let mut tree = toml::Value::Table(toml::Table::new());
        for (name, text) in layers {
            // parse each layer alone first so diagnostics carry its line numbers
            toml::from_str::<RunConfig>(text).map_err(|e| ConfigError::Parse(format!("{name}: {e}")))?;
            let layer: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(format!("{name}: {e}")))?;
            merge(&mut tree, layer);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("after overrides: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, reason: String| ConfigError::Invalid {
            field: field.into(),
            reason,
        };
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit in a signed 64-bit integer".into()));
        }
        self.beamline
            .validate()
            .map_err(|e| invalid("beamline", e.to_string()))?;
        if !(self.lens_solver.rings_per_mm > 0.0) {
            return Err(invalid("lens_solver.rings_per_mm", "must be positive".into()));
        }
        if !(self.source.temperature_k >= 0.0) {
            return Err(invalid("source.temperature_k", "must be non-negative".into()));
        }
        if self.knife_edge.positions < 4 {
            return Err(invalid("knife_edge.positions", "at least 4 are needed for a fit".into()));
        }
        if !self.scans.displacement_deflection_v.is_empty() && self.scans.displacement_deflection_v.len() != 2 {
            return Err(invalid("scans.displacement_deflection_v", "needs two entries or none".into()));
        }
        if self.reduction.ion_counts.iter().any(|&n| n == 0) {
            return Err(invalid("reduction.ion_counts", "ion counts must be positive".into()));
        }
        Ok(())
    }

    pub fn shot_source(&self) -> ShotSource {
        ShotSource::new(self.source, self.trigger, self.waveform, self.seed)
    }

    pub fn displacement_deflection(&self) -> Option<[f64; 2]> {
        match self.scans.displacement_deflection_v.as_slice() {
            [x, y] => Some([*x, *y]),
            _ => None,
        }
    }
}

/// Solved lens: geometry, charge solution at 1 V on the driven electrode
/// and the on-axis field map built from it.
#[derive(Debug, Clone)]
pub struct LensSolution {
    pub geometry: AxisymmetricElectrodeSet,
    pub charges: ChargeSolution,
    pub map: Arc<LensFieldMap>,
}

pub fn solve_lens(config: &RunConfig) -> Result<LensSolution, ProtocolError> {
    let geometry = build_lens_geometry(&config.lens, config.lens_solver.rings_per_mm)?;
    let volts: BTreeMap<String, f64> = [("outer".to_string(), 0.0), ("lens".to_string(), 1.0)].into();
    let charges = solve_axisymmetric_bem(&geometry, &volts, &config.lens_solver.bem)?;
    let map = LensFieldMap::build(&charges, 1.0, config.lens_solver.map)?;
    Ok(LensSolution {
        geometry,
        charges,
        map: Arc::new(map),
    })
}

/// Everything a protocol run needs, built once from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub trap_geometry: TrapGeometry,
    pub lens: LensSolution,
    pub beamline: Beamline,
    pub source: ShotSource,
}

impl Setup {
    pub fn build(config: &RunConfig) -> Result<Self, ProtocolError> {
        let lens = solve_lens(config)?;
        Self::with_lens(config, lens)
    }

    /// Reuse an already solved lens (it depends only on the lens sections).
    pub fn with_lens(config: &RunConfig, lens: LensSolution) -> Result<Self, ProtocolError> {
        let trap_geometry = build_trap_geometry(&config.trap)?;
        let beamline = Self::beamline_for(config, &trap_geometry, &lens, &config.extraction)?;
        Ok(Self {
            config: config.clone(),
            trap_geometry,
            lens,
            beamline,
            source: config.shot_source(),
        })
    }

    pub fn beamline_for(
        config: &RunConfig,
        trap_geometry: &TrapGeometry,
        lens: &LensSolution,
        extraction: &ExtractionConfig,
    ) -> Result<Beamline, ProtocolError> {
        Beamline::new(
            trap_geometry,
            &config.axial,
            &config.rf,
            extraction,
            &config.beamline,
            lens.map.clone(),
            &config.lens,
            ca40_mass(),
            ELEMENTARY_CHARGE,
        )
    }

    pub fn reduction_trap(&self) -> Result<ReductionTrap, ProtocolError> {
        let model = AxialPotentialModel::new(&self.trap_geometry, &self.config.axial);
        let omega = pseudopotential_params(&self.config.rf, ca40_mass(), ELEMENTARY_CHARGE)?.omega_rad;
        ReductionTrap::new(
            model,
            self.config.axial_targets.trapping_voltages(),
            &self.config.reduction.ramp.ramp_electrodes,
            omega,
            ca40_mass(),
            ELEMENTARY_CHARGE,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        let back = RunConfig::resolve(&text, &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::resolve("", &[]).unwrap(), c);
    }

    #[test]
    fn overrides_beat_file_values() {
        let text = "seed = 5\n[beamline]\nlens_voltage_v = 120.0\n";
        let c = RunConfig::resolve(text, &["beamline.lens_voltage_v=90".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.beamline.lens_voltage_v, 90.0);
        assert_eq!(c.seed, 9);
        let c = RunConfig::resolve(text, &[]).unwrap();
        assert_eq!(c.beamline.lens_voltage_v, 120.0);
        assert_eq!(c.seed, 5);
    }

    #[test]
    fn later_layers_win_key_by_key() {
        let base = "[beamline]\nlens_voltage_v = 120.0\ndetector_efficiency = 0.5\n";
        let cal = "[beamline]\nlens_position_m = 0.2\ndetector_efficiency = 0.6\n";
        let c = RunConfig::resolve_layers(&[("a", base), ("b", cal)], &[]).unwrap();
        assert_eq!(c.beamline.lens_voltage_v, 120.0);
        assert_eq!(c.beamline.lens_position_m, 0.2);
        assert_eq!(c.beamline.detector_efficiency, 0.6);
        let err = RunConfig::resolve_layers(&[("a", base), ("calibration.toml", "[x]\n")], &[]).unwrap_err();
        assert!(err.to_string().starts_with("calibration.toml"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::resolve("[beamline]\nlens_volts = 3.0\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lens_volts") && msg.contains("line 2"), "{msg}");
        let err = RunConfig::resolve("", &["beamline.nope=1".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn malformed_override_is_an_error() {
        assert!(matches!(
            RunConfig::resolve("", &["novalue".into()]),
            Err(ConfigError::Override(_))
        ));
        assert!(matches!(
            RunConfig::resolve("seed = 3", &["seed.x=1".into()]),
            Err(ConfigError::OverridePath { .. })
        ));
    }

    #[test]
    fn invalid_physics_values_are_rejected() {
        let err = RunConfig::resolve("", &["beamline.detector_efficiency=1.5".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }), "{err}");
    }
}
