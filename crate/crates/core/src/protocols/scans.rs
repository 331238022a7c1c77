//! Knife-edge, focal, displacement and aperture-alignment scans.

use serde::{Deserialize, Serialize};

use super::bank::{BeamBank, ShotSource, Shot};
use super::{Beamline, ExtractionRecord, ProtocolError, ScanAxis, ScanRow, ScanTable, TrapOutcome};
use crate::analysis::{fit_erf, ErfFitResult, FitOptions};
use crate::dynamics::{ThermalSource, TriggerModel};

/// Pilot shots use sample indices from here on, disjoint from scan shots.
pub const PILOT_SAMPLE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnifeEdgeOptions {
    pub positions: usize,
    /// Blade range as mean +- this many standard deviations of the pilot beam.
    pub span_sigmas: f64,
    pub pilot_shots: usize,
}

impl Default for KnifeEdgeOptions {
    fn default() -> Self {
        Self {
            positions: 21,
            span_sigmas: 4.0,
            pilot_shots: 200,
        }
    }
}

fn within(r: &ExtractionRecord, radius: f64) -> bool {
    r.razor_position_m[0].hypot(r.razor_position_m[1]) <= radius
}

/// Blade positions spanning the beam at the razor plane, from a pilot run.
pub fn pilot_blade_positions(
    beamline: &Beamline,
    source: &ShotSource,
    bank: &mut BeamBank,
    options: &KnifeEdgeOptions,
) -> Result<Vec<f64>, ProtocolError> {
    if options.positions < 2 || !(options.span_sigmas > 0.0) {
        return Err(ProtocolError::Invalid("knife-edge scan needs at least 2 positions and a positive span".into()));
    }
    let samples: Vec<u64> = (0..options.pilot_shots as u64).map(|i| PILOT_SAMPLE_BASE + i).collect();
    let xs: Vec<f64> = bank
        .shots(beamline, source, &samples)?
        .iter()
        .filter_map(Shot::record)
        .map(|r| r.razor_position_m[0])
        .collect();
    if xs.len() < 2 {
        return Err(ProtocolError::Invalid(format!(
            "pilot run: only {} ions reached the razor plane",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = options.span_sigmas * sd.max(1e-12 * (1.0 + mean.abs()));
    let m = options.positions;
    Ok((0..m)
        .map(|i| mean - half + 2.0 * half * i as f64 / (m - 1) as f64)
        .collect())
}

/// Knife-edge scan with a blade occluding x > blade position at the razor
/// plane. Row k uses samples k * shots .. (k + 1) * shots.
pub fn knife_edge_scan(
    beamline: &Beamline,
    source: &ShotSource,
    bank: &mut BeamBank,
    blade_positions: &[f64],
) -> Result<ScanTable, ProtocolError> {
    let shots = beamline.config.shots_per_position as u64;
    let m = blade_positions.len() as u64;
    let samples: Vec<u64> = (0..m * shots).collect();
    let outcomes = bank.shots(beamline, source, &samples)?;
    let radius = beamline.config.aperture_radius_m;
    let rows = blade_positions
        .iter()
        .enumerate()
        .map(|(k, &blade)| {
            let chunk = &outcomes[k * shots as usize..(k + 1) * shots as usize];
            let hits = chunk
                .iter()
                .filter_map(Shot::record)
                .filter(|r| r.detected && within(r, radius) && r.razor_position_m[0] < blade)
                .count() as u64;
            ScanRow { position: blade, shots, hits }
        })
        .collect();
    Ok(ScanTable::new(ScanAxis::BladeX, rows)?)
}

pub fn run_knife_edge(beamline: &Beamline, source: &ShotSource, blade_positions: &[f64]) -> Result<ScanTable, ProtocolError> {
    knife_edge_scan(beamline, source, &mut BeamBank::new(), blade_positions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRow {
    /// Scanned parameter: lens voltage (V) or displacement (m).
    pub parameter: f64,
    pub fit: Option<ErfFitResult>,
    /// Reason the row has no fit.
    pub flag: Option<String>,
    pub table: Option<ScanTable>,
}

impl SpotRow {
    pub fn sigma(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.sigma)
    }
}

fn spot_row(
    parameter: f64,
    beamline: &Beamline,
    source: &ShotSource,
    bank: &mut BeamBank,
    options: &KnifeEdgeOptions,
    fit: &FitOptions,
) -> Result<SpotRow, ProtocolError> {
    let positions = match pilot_blade_positions(beamline, source, bank, options) {
        Ok(p) => p,
        Err(ProtocolError::Invalid(msg)) => {
            return Ok(SpotRow { parameter, fit: None, flag: Some(msg), table: None })
        }
        Err(e) => return Err(e),
    };
    let table = knife_edge_scan(beamline, source, bank, &positions)?;
    Ok(match fit_erf(&table, fit) {
        Ok(f) => SpotRow { parameter, fit: Some(f), flag: None, table: Some(table) },
        Err(e) => SpotRow { parameter, fit: None, flag: Some(e.to_string()), table: Some(table) },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalScan {
    pub rows: Vec<SpotRow>,
    /// Voltage with the smallest fitted spot.
    pub best_voltage: Option<f64>,
}

/// Spot size at the razor plane for each lens voltage (knife edge plus fit).
pub fn run_focal_scan(
    beamline: &Beamline,
    source: &ShotSource,
    voltages: &[f64],
    options: &KnifeEdgeOptions,
    fit: &FitOptions,
) -> Result<FocalScan, ProtocolError> {
    if voltages.is_empty() || voltages.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ProtocolError::Invalid("lens voltages must be a strictly increasing list".into()));
    }
    let mut bank = BeamBank::new();
    let mut rows = Vec::with_capacity(voltages.len());
    for &v in voltages {
        let bl = beamline.with_lens(v, beamline.config.beam_displacement_at_lens_m);
        rows.push(spot_row(v, &bl, source, &mut bank, options, fit)?);
    }
    let best_voltage = rows
        .iter()
        .filter_map(|r| r.sigma().map(|s| (r.parameter, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(v, _)| v);
    Ok(FocalScan { rows, best_voltage })
}

/// Transverse position of the reference ion (zero temperature, no jitter)
/// where it crosses the lens principal plane.
pub fn chief_ray_at_lens(beamline: &Beamline, source: &ShotSource) -> Result<[f64; 2], ProtocolError> {
    let ideal = ShotSource {
        thermal: ThermalSource { temperature_k: 0.0, ..source.thermal },
        trigger: TriggerModel { jitter_sigma_s: 0.0, ..source.trigger },
        ..*source
    };
    match ideal.extract(beamline, 0)? {
        TrapOutcome::Exited(e) => {
            let s = e.state;
            let dz = beamline.lens_center_z() - s.position.z;
            Ok([
                s.position.x + dz * s.velocity.x / s.velocity.z,
                s.position.y + dz * s.velocity.y / s.velocity.z,
            ])
        }
        TrapOutcome::Lost(r) => Err(ProtocolError::Invalid(format!("reference ion lost in the trap: {r:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementScan {
    pub temperature_k: f64,
    pub deflection_voltages_v: Option<[f64; 2]>,
    pub rows: Vec<SpotRow>,
}

/// Fitted spot size against the displacement of the beam in the lens
/// principal plane. With deflection voltages, the steered reference ray is
/// re-centred so that it crosses the principal plane at the requested
/// displacement.
pub fn run_displacement_scan(
    beamline: &Beamline,
    source: &ShotSource,
    displacements: &[f64],
    deflection: Option<[f64; 2]>,
    options: &KnifeEdgeOptions,
    fit: &FitOptions,
) -> Result<DisplacementScan, ProtocolError> {
    if displacements.iter().any(|d| !(*d >= 0.0)) {
        return Err(ProtocolError::Invalid("displacements must be non-negative".into()));
    }
    let base = beamline.with_deflection(deflection.unwrap_or([0.0, 0.0]));
    let chief = if deflection.is_some() { chief_ray_at_lens(&base, source)? } else { [0.0, 0.0] };
    let mut bank = BeamBank::new();
    let mut rows = Vec::with_capacity(displacements.len());
    for &d in displacements {
        let bl = base.with_lens(base.config.lens_voltage_v, d - chief[0]);
        rows.push(spot_row(d, &bl, source, &mut bank, options, fit)?);
    }
    Ok(DisplacementScan {
        temperature_k: source.thermal.temperature_k,
        deflection_voltages_v: deflection,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCell {
    pub deflection_v: [f64; 2],
    pub shots: u64,
    pub hits: u64,
}

impl AlignmentCell {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.shots as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub aperture_radius_m: f64,
    pub cells: Vec<AlignmentCell>,
    /// Centroid of the cells sharing the highest hit count.
    pub argmax_v: [f64; 2],
    pub max_rate: f64,
}

/// Hit rate through a centred aperture at the razor plane for every pair of
/// deflection voltages.
pub fn run_aperture_alignment_scan(
    beamline: &Beamline,
    source: &ShotSource,
    grid_x: &[f64],
    grid_y: &[f64],
    shots: u64,
    aperture_radius: f64,
) -> Result<AlignmentMap, ProtocolError> {
    if grid_x.is_empty() || grid_y.is_empty() || shots == 0 || !(aperture_radius > 0.0) {
        return Err(ProtocolError::Invalid("alignment scan needs a non-empty grid, shots and an aperture".into()));
    }
    let samples: Vec<u64> = (0..shots).collect();
    let mut cells = Vec::with_capacity(grid_x.len() * grid_y.len());
    for &vx in grid_x {
        for &vy in grid_y {
            let bl = beamline.with_deflection([vx, vy]);
            let hits = BeamBank::new()
                .shots(&bl, source, &samples)?
                .iter()
                .filter_map(Shot::record)
                .filter(|r| r.detected && within(r, aperture_radius))
                .count() as u64;
            cells.push(AlignmentCell { deflection_v: [vx, vy], shots, hits });
        }
    }
    let best = cells.iter().map(|c| c.hits).max().unwrap_or(0);
    let top: Vec<&AlignmentCell> = cells.iter().filter(|c| c.hits == best).collect();
    let n = top.len() as f64;
    let argmax_v = [
        top.iter().map(|c| c.deflection_v[0]).sum::<f64>() / n,
        top.iter().map(|c| c.deflection_v[1]).sum::<f64>() / n,
    ];
    Ok(AlignmentMap {
        aperture_radius_m: aperture_radius,
        cells,
        argmax_v,
        max_rate: best as f64 / shots as f64,
    })
}
