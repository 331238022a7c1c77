use std::f64::consts::PI;

use ionfocus::constants::{ca40_mass, COULOMB_CONSTANT, ELEMENTARY_CHARGE};
use ionfocus::dynamics::{
    integrate, sample_thermal_ensemble, ForceField, IonState, StepControl, SwitchWaveform,
    ThermalSource, Vec3,
};
use ionfocus::fields::{AxialCalibration, AxialPotentialModel, AxialTargets, RfDriveConfig, SegmentVoltages};
use ionfocus::geometry::{build_trap_geometry, TrapLayoutConfig};
use ionfocus::protocols::{ExtractionConfig, ExtractionField, TrapSection};
use proptest::prelude::*;

fn trap(rf: &RfDriveConfig) -> TrapSection {
    let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
    TrapSection::new(
        &g,
        &AxialCalibration::default(),
        rf,
        &ExtractionConfig::default(),
        [0.0, 0.0],
        ca40_mass(),
        ELEMENTARY_CHARGE,
    )
    .unwrap()
}

/// Switch that never fires within the tests.
fn idle() -> SwitchWaveform {
    SwitchWaveform { trigger_time_s: f64::INFINITY, ..SwitchWaveform::default() }
}

/// Anisotropic quartic well: U/m = w^2 (x^2 + 2 y^2 + 3 z^2) / 2 + l r^4.
struct Anharmonic {
    w2: f64,
    l: f64,
}

impl Anharmonic {
    fn energy(&self, s: &IonState) -> f64 {
        let p = s.position;
        let r2 = p.norm_squared();
        s.kinetic_energy() + s.mass * (0.5 * self.w2 * (p.x * p.x + 2.0 * p.y * p.y + 3.0 * p.z * p.z) + self.l * r2 * r2)
    }
}

impl ForceField for Anharmonic {
    fn accelerations(&self, states: &[IonState], _t: f64, out: &mut [Vec3]) {
        for (o, s) in out.iter_mut().zip(states) {
            let p = s.position;
            let r2 = p.norm_squared();
            *o = -self.w2 * Vec3::new(p.x, 2.0 * p.y, 3.0 * p.z) - 4.0 * self.l * r2 * p;
        }
    }
}

#[test]
fn static_field_energy_drift_over_a_million_steps() {
    let w = 2.0 * PI * 280e3;
    let field = Anharmonic { w2: w * w, l: 0.3 * w * w / (20e-6f64).powi(2) };
    let mut s = IonState::calcium(Vec3::new(12e-6, -7e-6, 9e-6));
    s.velocity = Vec3::new(3.0, 5.0, -2.0);
    let dt = 2.0 * PI / w / 1000.0;
    let steps = 1_000_000u64;
    let out = integrate(&[s], &field, (0.0, steps as f64 * dt), StepControl::Fixed { dt }, 10).unwrap();
    assert!(out.metadata.steps >= steps);
    let e: Vec<f64> = out.trajectories[0].states.iter().map(|s| field.energy(s)).collect();
    let k = e.len() / 10;
    let first = e[..k].iter().sum::<f64>() / k as f64;
    let last = e[e.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(((last - first) / first).abs() < 1e-6, "{}", (last - first) / first);
}

/// Axial model plus a harmonic radial confinement and the Coulomb repulsion.
struct AxialPair {
    model: AxialPotentialModel,
    voltages: SegmentVoltages,
    w_rad2: f64,
}

impl ForceField for AxialPair {
    fn accelerations(&self, states: &[IonState], _t: f64, out: &mut [Vec3]) {
        for (i, (o, s)) in out.iter_mut().zip(states).enumerate() {
            let qm = s.charge / s.mass;
            let d = self.model.derivatives(&self.voltages, s.position.z);
            let mut a = Vec3::new(-self.w_rad2 * s.position.x, -self.w_rad2 * s.position.y, -qm * d[1]);
            for (j, other) in states.iter().enumerate() {
                if j != i {
                    let r = s.position - other.position;
                    a += qm * COULOMB_CONSTANT * other.charge * r / r.norm().powi(3);
                }
            }
            *o = a;
        }
    }
}

#[test]
fn symmetric_pair_stays_mirror_symmetric() {
    let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
    let field = AxialPair {
        model: AxialPotentialModel::new(&g, &AxialCalibration::default()),
        voltages: AxialTargets::default().trapping_voltages(),
        w_rad2: (2.0 * PI * 430e3f64).powi(2),
    };
    let mut a = IonState::calcium(Vec3::new(0.4e-6, -0.2e-6, 9e-6));
    a.velocity = Vec3::new(0.1, 0.05, -0.3);
    let mut b = a;
    b.position.z = -a.position.z;
    b.velocity.z = -a.velocity.z;
    let period = 1.0 / 280e3;
    let out = integrate(&[a, b], &field, (0.0, 1000.0 * period), StepControl::Fixed { dt: period / 200.0 }, 0).unwrap();
    let (fa, fb) = (out.final_states[0], out.final_states[1]);
    let scale = 10e-6;
    assert!((fa.position.x - fb.position.x).abs() < 1e-9 * scale);
    assert!((fa.position.y - fb.position.y).abs() < 1e-9 * scale);
    assert!((fa.position.z + fb.position.z).abs() < 1e-9 * scale, "{} {}", fa.position.z, fb.position.z);
    assert!((fa.velocity.z + fb.velocity.z).abs() < 1e-9 * fa.velocity.norm().max(1.0));
}

#[test]
fn micromotion_amplitude_is_half_q_of_secular() {
    let rf = RfDriveConfig::default();
    let t = trap(&rf);
    let q = t.mathieu_q();
    assert!((q - 0.100).abs() < 0.005);
    let wf = idle();
    let field = ExtractionField { trap: &t, waveform: &wf };
    let ion = t.with_micromotion(IonState::calcium(Vec3::new(1e-6, 0.0, t.well().well_z)));
    let per = 100usize;
    let dt = rf.period() / per as f64;
    let periods = 600usize;
    let out = integrate(&[ion], &field, (0.0, periods as f64 * rf.period()), StepControl::Fixed { dt }, 1).unwrap();
    let tr = &out.trajectories[0];
    let x: Vec<f64> = tr.states.iter().map(|s| s.position.x).collect();
    // secular part: running mean over one RF period
    let mut fit = [[0.0; 2]; 2];
    let mut rhs = [0.0; 2];
    for i in per..x.len() - per {
        let s = x[i - per / 2..i + per / 2].iter().sum::<f64>() / per as f64;
        let r = x[i] - s;
        let phase = rf.angular_frequency() * tr.times[i];
        let basis = [s * phase.cos(), s * phase.sin()];
        for a in 0..2 {
            rhs[a] += basis[a] * r;
            for b in 0..2 {
                fit[a][b] += basis[a] * basis[b];
            }
        }
    }
    let det = fit[0][0] * fit[1][1] - fit[0][1] * fit[1][0];
    let c = (rhs[0] * fit[1][1] - rhs[1] * fit[0][1]) / det;
    let d = (fit[0][0] * rhs[1] - fit[1][0] * rhs[0]) / det;
    let ratio = c.hypot(d);
    assert!((ratio / (0.5 * q) - 1.0).abs() < 0.1, "ratio {ratio}, q/2 {}", 0.5 * q);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn thermal_ensembles_are_seed_deterministic(seed in any::<u64>(), t in 0.0f64..0.05) {
        let well = trap(&RfDriveConfig::default()).thermal_well();
        let src = ThermalSource { temperature_k: t, ..ThermalSource::default() };
        let a = sample_thermal_ensemble(&src, &well, 20, seed, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
        let b = sample_thermal_ensemble(&src, &well, 20, seed, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn trajectories_are_seed_deterministic(seed in any::<u64>()) {
        let rf = RfDriveConfig::default();
        let t = trap(&rf);
        let src = ThermalSource::default();
        let ion = sample_thermal_ensemble(&src, &t.thermal_well(), 1, seed, ca40_mass(), ELEMENTARY_CHARGE).unwrap()[0];
        let wf = idle();
        let field = ExtractionField { trap: &t, waveform: &wf };
        let run = || integrate(&[ion], &field, (0.0, 20.0 * rf.period()), StepControl::Fixed { dt: rf.period() / 100.0 }, 7).unwrap();
        prop_assert_eq!(run(), run());
    }
}
