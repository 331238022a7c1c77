//! Trap-to-detector beam line: full-RF extraction out of the trap, field-free
//! drift, ray tracing through the tabulated einzel-lens field and detection.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExtractionRecord, ProtocolError};
use crate::constants::joule_to_ev;
use crate::dynamics::{
    integrate, trigger_and_waveform, ForceField, HarmonicWell, IonState, StepControl,
    SwitchWaveform, TriggerModel, Vec3,
};
use crate::fields::{
    axial_potential_profile, default_profile_samples, pseudopotential_params, AxialCalibration,
    AxialPotentialModel, LensFieldMap, RfDriveConfig, SegmentVoltages, WellReport,
};
use crate::geometry::{LensConfig, TrapGeometry};
use crate::seeds::rng_for;

/// Lens-local origin (upstream face of the first lens electrode) measured from
/// the trap centre, as produced by the lens position calibration.
pub const FROZEN_LENS_POSITION_M: f64 = 0.212679;

/// Seed stream tags.
pub(crate) const STREAM_THERMAL: u64 = 1;
pub(crate) const STREAM_TRIGGER: u64 = 2;
pub(crate) const STREAM_DETECTION: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub trapping_voltage_v: f64,
    pub trapping_electrodes: Vec<usize>,
    /// Electrodes switched by the extraction waveform.
    pub extraction_electrodes: Vec<usize>,
    /// Scale on the switched electrodes' potential; 1 leaves the model as is.
    pub energy_scale: f64,
    /// The trigger is requested this many RF periods after the start.
    pub request_time_rf_periods: f64,
    pub rf_fringe_length_m: f64,
    /// On-axis RF potential inside the trap as a fraction of the RF amplitude.
    pub rf_axis_offset_fraction: f64,
    /// Transverse field of the deflection electrodes per volt, in units of 1 / r0.
    pub deflection_coupling: f64,
    /// Trap stage ends this many fringe lengths past the blade end.
    pub exit_margin_fringe_lengths: f64,
    pub max_flight_time_s: f64,
    pub steps_per_rf_period: u32,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            trapping_voltage_v: 35.0,
            trapping_electrodes: vec![7, 13],
            extraction_electrodes: vec![9, 10],
            energy_scale: 1.0,
            request_time_rf_periods: 1.0,
            rf_fringe_length_m: 1e-3,
            rf_axis_offset_fraction: 0.5,
            deflection_coupling: 1.0,
            exit_margin_fringe_lengths: 5.0,
            max_flight_time_s: 100e-6,
            steps_per_rf_period: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamLineConfig {
    pub lens_voltage_v: f64,
    /// Lateral (x) offset of the beam axis from the lens axis.
    pub beam_displacement_at_lens_m: f64,
    pub deflection_voltages_v: [f64; 2],
    pub detector_efficiency: f64,
    pub aperture_radius_m: f64,
    pub shots_per_position: u32,
    pub lens_position_m: f64,
    pub lens_time_step_s: f64,
}

impl Default for BeamLineConfig {
    fn default() -> Self {
        Self {
            lens_voltage_v: 150.0,
            beam_displacement_at_lens_m: 0.0,
            deflection_voltages_v: [0.0, 0.0],
            detector_efficiency: 0.87,
            aperture_radius_m: 1e-3,
            shots_per_position: 10,
            lens_position_m: FROZEN_LENS_POSITION_M,
            lens_time_step_s: 0.5e-9,
        }
    }
}

impl BeamLineConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::Invalid(m));
        if !(0.0..=1.0).contains(&self.detector_efficiency) {
            return bad(format!("detector efficiency {} outside [0, 1]", self.detector_efficiency));
        }
        if self.shots_per_position < 1 {
            return bad("shots per position must be at least 1".into());
        }
        if !(self.aperture_radius_m > 0.0) {
            return bad(format!("aperture radius {}", self.aperture_radius_m));
        }
        if !(self.lens_time_step_s > 0.0) {
            return bad(format!("lens time step {}", self.lens_time_step_s));
        }
        if !self.lens_voltage_v.is_finite()
            || !self.beam_displacement_at_lens_m.is_finite()
            || !self.lens_position_m.is_finite()
            || self.deflection_voltages_v.iter().any(|v| !v.is_finite())
        {
            return bad("non-finite beam line parameter".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReason {
    /// Left the radial aperture of the trap.
    TrapWall,
    /// Never crossed the trap exit plane within the flight-time limit.
    NotExtracted,
    /// Reached the lens electrodes or the lens exit plate.
    LensElectrode,
    /// Turned around in the lens field.
    Reflected,
}

/// State of an ion as it leaves the trap stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapExit {
    pub trigger_time: f64,
    pub time: f64,
    pub state: IonState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrapOutcome {
    Exited(TrapExit),
    Lost(LossReason),
}

/// Full-RF field model of the segmented trap during extraction.
#[derive(Debug, Clone)]
pub struct TrapSection {
    model: AxialPotentialModel,
    trapping: SegmentVoltages,
    extraction: SegmentVoltages,
    rf: RfDriveConfig,
    blade_end_z: f64,
    fringe_length: f64,
    offset_fraction: f64,
    deflection_span: (f64, f64),
    deflection_field: [f64; 2],
    deflection_coupling: f64,
    aperture: f64,
    exit_z: f64,
    max_time: f64,
    dt: f64,
    request_time: f64,
    well: WellReport,
    omega_pseudo: f64,
    mathieu_q: f64,
}

fn logistic_derivs(x: f64) -> [f64; 4] {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    let s1 = s * (1.0 - s);
    [s, s1, s1 * (1.0 - 2.0 * s), s1 * (1.0 - 6.0 * s + 6.0 * s * s)]
}

impl TrapSection {
    pub fn new(
        geometry: &TrapGeometry,
        calibration: &AxialCalibration,
        rf: &RfDriveConfig,
        config: &ExtractionConfig,
        deflection_voltages: [f64; 2],
        mass: f64,
        charge: f64,
    ) -> Result<Self, ProtocolError> {
        rf.validate()?;
        let check = |list: &[usize]| -> Result<(), ProtocolError> {
            match list.iter().find(|&&i| !(1..=geometry.segments.len()).contains(&i)) {
                Some(i) => Err(ProtocolError::Invalid(format!("no electrode {i}"))),
                None => Ok(()),
            }
        };
        check(&config.trapping_electrodes)?;
        check(&config.extraction_electrodes)?;
        if !(config.energy_scale > 0.0 && config.rf_fringe_length_m > 0.0 && config.steps_per_rf_period >= 50) {
            return Err(ProtocolError::Invalid(
                "energy scale and fringe length must be positive; at least 50 steps per RF period".into(),
            ));
        }
        let model = AxialPotentialModel::new(geometry, calibration);
        let trapping = SegmentVoltages::from_pairs(
            &config
                .trapping_electrodes
                .iter()
                .map(|&i| (i, config.trapping_voltage_v))
                .collect::<Vec<_>>(),
        );
        let extraction = SegmentVoltages::from_pairs(
            &config
                .extraction_electrodes
                .iter()
                .map(|&i| (i, config.energy_scale))
                .collect::<Vec<_>>(),
        );
        let samples = default_profile_samples(&model);
        let well = *axial_potential_profile(&model, &trapping, &samples, mass, charge)
            .well()
            .ok_or_else(|| ProtocolError::Invalid("trapping voltages do not form a well".into()))?;
        let secular = pseudopotential_params(rf, mass, charge)?;
        let deflection = geometry
            .segment(geometry.segments.len())
            .ok_or_else(|| ProtocolError::Invalid("missing deflection electrode".into()))?;
        let r0 = geometry.radial_half_aperture();
        let blade_end_z = geometry.blade_end_z();
        Ok(Self {
            model,
            trapping,
            extraction,
            rf: *rf,
            blade_end_z,
            fringe_length: config.rf_fringe_length_m,
            offset_fraction: config.rf_axis_offset_fraction,
            deflection_span: (deflection.start(), deflection.end()),
            deflection_field: deflection_voltages.map(|v| config.deflection_coupling * v / r0),
            deflection_coupling: config.deflection_coupling,
            aperture: r0,
            exit_z: blade_end_z + config.exit_margin_fringe_lengths * config.rf_fringe_length_m,
            max_time: config.max_flight_time_s,
            dt: rf.period() / config.steps_per_rf_period as f64,
            request_time: config.request_time_rf_periods * rf.period(),
            well,
            omega_pseudo: secular.omega_rad,
            mathieu_q: secular.mathieu_q,
        })
    }

    pub fn rf(&self) -> &RfDriveConfig {
        &self.rf
    }

    pub fn well(&self) -> &WellReport {
        &self.well
    }

    pub fn exit_z(&self) -> f64 {
        self.exit_z
    }

    pub fn request_time(&self) -> f64 {
        self.request_time
    }

    pub fn mathieu_q(&self) -> f64 {
        self.mathieu_q
    }

    /// Same trap with other deflection voltages.
    pub fn with_deflection(&self, voltages: [f64; 2]) -> Self {
        let mut t = self.clone();
        t.deflection_field = voltages.map(|v| self.deflection_coupling * v / self.aperture);
        t
    }

    /// Harmonic approximation of the trapping well: pseudopotential with the
    /// dc defocusing removed radially, axial frequency from the axial model.
    pub fn thermal_well(&self) -> HarmonicWell {
        let w_ax = self.well.omega_ax;
        let w_rad = (self.omega_pseudo.powi(2) - 0.5 * w_ax * w_ax).max(0.0).sqrt();
        HarmonicWell {
            omega: Vec3::new(w_rad, w_rad, w_ax),
            center: Vec3::new(0.0, 0.0, self.well.well_z),
        }
    }

    /// Add the micromotion velocity matching a secular state at RF phase zero.
    pub fn with_micromotion(&self, mut state: IonState) -> IonState {
        let half_q_omega = 0.5 * self.mathieu_q * self.rf.angular_frequency();
        state.velocity.x += half_q_omega * state.position.x;
        state.velocity.y -= half_q_omega * state.position.y;
        state
    }

    /// Electric field with the switched electrodes at `level` volts.
    pub fn field(&self, p: &Vec3, t: f64, level: f64) -> Vec3 {
        let (x, y, z) = (p.x, p.y, p.z);
        let rho2 = x * x + y * y;
        let mut d = self.model.derivatives(&self.trapping, z);
        if level != 0.0 {
            let e = self.model.derivatives(&self.extraction, z);
            for k in 0..4 {
                d[k] += level * e[k];
            }
        }
        let mut ex = 0.5 * x * d[2];
        let mut ey = 0.5 * y * d[2];
        let mut ez = -d[1] + 0.25 * rho2 * d[3];

        let amp = self.rf.amplitude() * (self.rf.angular_frequency() * t).sin();
        if amp != 0.0 {
            let lf = self.fringe_length;
            let s = logistic_derivs((self.blade_end_z - z) / lf);
            let g = s[0];
            let g1 = -s[1] / lf;
            let g2 = s[2] / (lf * lf);
            let g3 = -s[3] / (lf * lf * lf);
            let r02 = self.aperture * self.aperture;
            let quad = self.rf.geometric_efficiency * amp / r02;
            ex -= quad * g * x;
            ey += quad * g * y;
            ez -= 0.5 * quad * g1 * (x * x - y * y);
            let off = self.offset_fraction * amp;
            ex += 0.5 * off * g2 * x;
            ey += 0.5 * off * g2 * y;
            ez -= off * (g1 - 0.25 * g3 * rho2);
        }
        if z >= self.deflection_span.0 && z <= self.deflection_span.1 {
            ex += self.deflection_field[0];
            ey += self.deflection_field[1];
        }
        Vec3::new(ex, ey, ez)
    }

    /// Integrate one ion from t = 0 through the switch to the exit plane.
    pub fn extract(&self, ion: IonState, waveform: &SwitchWaveform) -> Result<TrapOutcome, ProtocolError> {
        let field = ExtractionField { trap: self, waveform };
        let out = integrate(
            &[ion],
            &field,
            (0.0, self.max_time),
            StepControl::Fixed { dt: self.dt },
            0,
        )?;
        Ok(match out.exits.first() {
            Some(e) if e.state.position.z >= self.exit_z => TrapOutcome::Exited(TrapExit {
                trigger_time: waveform.trigger_time_s,
                time: e.time,
                state: e.state,
            }),
            Some(_) => TrapOutcome::Lost(LossReason::TrapWall),
            None => TrapOutcome::Lost(LossReason::NotExtracted),
        })
    }
}

/// Force field of the trap with a given switching waveform on the
/// extraction electrodes.
pub struct ExtractionField<'a> {
    pub trap: &'a TrapSection,
    pub waveform: &'a SwitchWaveform,
}

impl ForceField for ExtractionField<'_> {
    fn accelerations(&self, states: &[IonState], t: f64, out: &mut [Vec3]) {
        let level = self.waveform.level(t);
        for (o, s) in out.iter_mut().zip(states) {
            *o = (s.charge / s.mass) * self.trap.field(&s.position, t, level);
        }
    }

    fn in_domain(&self, s: &IonState, _t: f64) -> bool {
        let p = &s.position;
        p.z < self.trap.exit_z && p.x.hypot(p.y) < self.trap.aperture
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneCrossing {
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LensOutcome {
    Arrived {
        razor: PlaneCrossing,
        detector: PlaneCrossing,
    },
    Lost(LossReason),
}

/// Tabulated einzel lens placed on the beam axis.
#[derive(Debug, Clone)]
pub struct LensSection {
    pub map: Arc<LensFieldMap>,
    /// Position of the lens-local origin along the beam axis.
    pub lens_z: f64,
    pub dt: f64,
}

fn drift_to(pos: &mut Vec3, vel: &Vec3, t: &mut f64, z: f64) {
    let dt = (z - pos.z) / vel.z;
    *pos += dt * vel;
    pos.z = z;
    *t += dt;
}

impl LensSection {
    fn accel(&self, p: &Vec3, volts: f64, q_over_m: f64) -> Option<Vec3> {
        let e = self.map.field_xyz(p.x, p.y, p.z - self.lens_z, volts)?;
        Some(q_over_m * Vec3::new(e[0], e[1], e[2]))
    }

    /// Carry a state at time `t` (lens-axis frame) through the lens to the
    /// razor and detector planes.
    pub fn propagate(
        &self,
        start: &IonState,
        t: f64,
        volts: f64,
        razor_z: f64,
        detector_z: f64,
    ) -> LensOutcome {
        let mut p = start.position;
        let mut v = start.velocity;
        let mut t = t;
        if !(v.z > 0.0) {
            return LensOutcome::Lost(LossReason::Reflected);
        }
        let o = &self.map.options;
        let (z_in, z_out) = (self.lens_z + o.z_min_m, self.lens_z + o.z_max_m);
        let mut razor: Option<PlaneCrossing> = None;
        let capture = |p: &Vec3, v: &Vec3, t: f64| PlaneCrossing { time: t, position: *p, velocity: *v };

        if volts != 0.0 && p.z < z_out && p.z < detector_z {
            if p.z < z_in {
                if razor_z <= z_in && p.z < razor_z {
                    let (mut pr, mut tr) = (p, t);
                    drift_to(&mut pr, &v, &mut tr, razor_z);
                    razor = Some(capture(&pr, &v, tr));
                }
                drift_to(&mut p, &v, &mut t, z_in);
            }
            let qm = start.charge / start.mass;
            let h = self.dt;
            let Some(mut a) = self.accel(&p, volts, qm) else {
                return LensOutcome::Lost(LossReason::LensElectrode);
            };
            while p.z < z_out && p.z < detector_z {
                let (p0, v0, t0) = (p, v, t);
                v += 0.5 * h * a;
                p += h * v;
                match self.accel(&p, volts, qm) {
                    Some(na) => a = na,
                    None => return LensOutcome::Lost(LossReason::LensElectrode),
                }
                v += 0.5 * h * a;
                t += h;
                if !(v.z > 0.0) {
                    return LensOutcome::Lost(LossReason::Reflected);
                }
                if razor.is_none() && p0.z < razor_z && p.z >= razor_z {
                    razor = Some(hermite_crossing(&p0, &v0, t0, &p, &v, t, razor_z));
                }
                if p.z >= detector_z {
                    let det = hermite_crossing(&p0, &v0, t0, &p, &v, t, detector_z);
                    return match razor {
                        Some(r) => LensOutcome::Arrived { razor: r, detector: det },
                        None => LensOutcome::Lost(LossReason::LensElectrode),
                    };
                }
            }
        }
        if razor.is_none() {
            if p.z > razor_z {
                // razor plane lies upstream of the start; should not happen in a valid layout
                return LensOutcome::Lost(LossReason::LensElectrode);
            }
            let (mut pr, mut tr) = (p, t);
            drift_to(&mut pr, &v, &mut tr, razor_z);
            razor = Some(capture(&pr, &v, tr));
        }
        drift_to(&mut p, &v, &mut t, detector_z);
        LensOutcome::Arrived {
            razor: razor.expect("razor crossing set"),
            detector: capture(&p, &v, t),
        }
    }
}

/// Crossing of the plane z = `plane` between two integrator steps, with
/// cubic Hermite interpolation of the transverse motion.
fn hermite_crossing(p0: &Vec3, v0: &Vec3, t0: f64, p1: &Vec3, v1: &Vec3, t1: f64, plane: f64) -> PlaneCrossing {
    let h = t1 - t0;
    let eval = |s: f64| -> (Vec3, Vec3) {
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let pos = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s * s - 2.0 * s;
        let vel = (d00 * p0 + d01 * p1) / h + d10 * v0 + d11 * v1;
        (pos, vel)
    };
    // Newton on z(s) = plane from the linear estimate
    let mut s = ((plane - p0.z) / (p1.z - p0.z)).clamp(0.0, 1.0);
    for _ in 0..4 {
        let (pos, vel) = eval(s);
        let dzds = vel.z * h;
        if dzds == 0.0 {
            break;
        }
        s = (s - (pos.z - plane) / dzds).clamp(0.0, 1.0);
    }
    let (mut pos, vel) = eval(s);
    pos.z = plane;
    PlaneCrossing { time: t0 + s * h, position: pos, velocity: vel }
}

/// The assembled trap, lens and detector planes.
#[derive(Debug, Clone)]
pub struct Beamline {
    pub trap: TrapSection,
    pub lens: LensSection,
    pub config: BeamLineConfig,
    pub razor_plane_z: f64,
    pub detector_plane_z: f64,
    pub lens_center_offset: f64,
    pub lens_length: f64,
}

impl Beamline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        geometry: &TrapGeometry,
        calibration: &AxialCalibration,
        rf: &RfDriveConfig,
        extraction: &ExtractionConfig,
        config: &BeamLineConfig,
        lens_map: Arc<LensFieldMap>,
        lens_config: &LensConfig,
        mass: f64,
        charge: f64,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        let trap = TrapSection::new(
            geometry,
            calibration,
            rf,
            extraction,
            config.deflection_voltages_v,
            mass,
            charge,
        )?;
        let lens = LensSection {
            map: lens_map,
            lens_z: config.lens_position_m,
            dt: config.lens_time_step_s,
        };
        if lens.lens_z + lens.map.options.z_min_m < trap.exit_z {
            return Err(ProtocolError::Invalid(format!(
                "lens field starts at {:.4} m, upstream of the trap exit plane",
                lens.lens_z + lens.map.options.z_min_m
            )));
        }
        if !(geometry.razor_plane_z < geometry.detector_plane_z) {
            return Err(ProtocolError::Invalid("razor plane must precede the detector".into()));
        }
        Ok(Self {
            trap,
            lens,
            config: config.clone(),
            razor_plane_z: geometry.razor_plane_z,
            detector_plane_z: geometry.detector_plane_z,
            lens_center_offset: {
                let (a, b) = lens_config.middle_electrode_span();
                0.5 * (a + b)
            },
            lens_length: lens_config.total_length(),
        })
    }

    /// Axial position of the lens principal-plane estimate in the trap frame.
    pub fn lens_center_z(&self) -> f64 {
        self.lens.lens_z + self.lens_center_offset
    }

    /// Same beam line with different lens voltage, displacement or position.
    pub fn with_lens(&self, voltage: f64, displacement: f64) -> Self {
        let mut b = self.clone();
        b.config.lens_voltage_v = voltage;
        b.config.beam_displacement_at_lens_m = displacement;
        b
    }

    pub fn with_deflection(&self, voltages: [f64; 2]) -> Self {
        let mut b = self.clone();
        b.trap = self.trap.with_deflection(voltages);
        b.config.deflection_voltages_v = voltages;
        b
    }

    /// Lens and detector stages for an ion that left the trap.
    pub fn downstream(&self, exit: &TrapExit) -> LensOutcome {
        let mut s = exit.state;
        s.position.x += self.config.beam_displacement_at_lens_m;
        self.lens.propagate(
            &s,
            exit.time,
            self.config.lens_voltage_v,
            self.razor_plane_z,
            self.detector_plane_z,
        )
    }

    /// Build the record for `sample` from its trap exit; `detected` is the
    /// Bernoulli draw for this sample.
    pub fn record(&self, sample: u64, exit: &TrapExit, detected: bool) -> Result<ExtractionRecord, LossReason> {
        match self.downstream(exit) {
            LensOutcome::Arrived { razor, detector } => Ok(ExtractionRecord {
                sample,
                trigger_time_s: exit.trigger_time,
                exit_time_s: detector.time - exit.trigger_time,
                plane_z_m: detector.position.z,
                hit_position_m: [detector.position.x, detector.position.y],
                razor_position_m: [razor.position.x, razor.position.y],
                transverse_velocity_m_s: [detector.velocity.x, detector.velocity.y],
                kinetic_energy_ev: joule_to_ev(0.5 * exit.state.mass * detector.velocity.norm_squared()),
                detected,
            }),
            LensOutcome::Lost(r) => Err(r),
        }
    }
}

/// Bernoulli detection draw for `sample`, independent of everything else.
pub fn detection_draw(seed: u64, sample: u64, efficiency: f64) -> bool {
    let mut rng = rng_for(seed, &[STREAM_DETECTION, sample]);
    rng.gen::<f64>() < efficiency
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LostIon {
    pub sample: u64,
    pub reason: LossReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExtractionRun {
    pub records: Vec<ExtractionRecord>,
    pub lost: Vec<LostIon>,
}

/// Extract every ion of `ensemble` (sample index = position in the slice)
/// and trace it to the detector.
pub fn run_extraction(
    ensemble: &[IonState],
    beamline: &Beamline,
    trigger: &TriggerModel,
    waveform: &SwitchWaveform,
    seed: u64,
) -> Result<ExtractionRun, ProtocolError> {
    let results: Vec<Result<Result<ExtractionRecord, LostIon>, ProtocolError>> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, ion)| {
            let sample = i as u64;
            let wf = trigger_and_waveform(trigger, waveform, beamline.trap.rf(), beamline.trap.request_time(), sample);
            let ion = beamline.trap.with_micromotion(*ion);
            Ok(match beamline.trap.extract(ion, &wf)? {
                TrapOutcome::Exited(exit) => {
                    let detected = detection_draw(seed, sample, beamline.config.detector_efficiency);
                    beamline.record(sample, &exit, detected).map_err(|reason| LostIon { sample, reason })
                }
                TrapOutcome::Lost(reason) => Err(LostIon { sample, reason }),
            })
        })
        .collect();
    let mut run = ExtractionRun::default();
    for r in results {
        match r? {
            Ok(rec) => run.records.push(rec),
            Err(lost) => run.lost.push(lost),
        }
    }
    Ok(run)
}
