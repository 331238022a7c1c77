use std::collections::BTreeMap;

use ionfocus::constants::{ca40_mass, ELEMENTARY_CHARGE};
use ionfocus::fields::{
    axial_potential_profile, calibrate_axial, calibrate_efficiency, default_profile_samples,
    filament_kernel_matrix, pseudopotential_params, solve_axisymmetric_bem, AxialCalibration,
    AxialPotentialModel, AxialTargets, BemOptions, RfDriveConfig, SegmentVoltages,
};
use ionfocus::geometry::{build_lens_geometry, build_trap_geometry, LensConfig, TrapLayoutConfig};
use proptest::prelude::*;

fn volts(outer: f64, lens: f64) -> BTreeMap<String, f64> {
    [("outer".to_string(), outer), ("lens".to_string(), lens)].into_iter().collect()
}

const PROBES: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 5e-3), (1e-3, -2e-3), (2e-3, 12e-3)];

fn trap_model() -> AxialPotentialModel {
    let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
    AxialPotentialModel::new(&g, &AxialCalibration::default())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn bem_is_linear_and_superposes(a in -300.0f64..300.0, b in -300.0f64..300.0, alpha in -4.0f64..4.0) {
        let set = build_lens_geometry(&LensConfig::default(), 2.0).unwrap();
        let opts = BemOptions::default();
        let s1 = solve_axisymmetric_bem(&set, &volts(a, b), &opts).unwrap();
        let s2 = solve_axisymmetric_bem(&set, &volts(b, -a), &opts).unwrap();
        let sum = solve_axisymmetric_bem(&set, &volts(a + b, b - a), &opts).unwrap();
        let scaled = solve_axisymmetric_bem(&set, &volts(alpha * a, alpha * b), &opts).unwrap();
        let scale = a.abs().max(b.abs()).max(1.0);
        for (r, z) in PROBES {
            let (p1, p2) = (s1.potential(r, z).unwrap(), s2.potential(r, z).unwrap());
            prop_assert!((sum.potential(r, z).unwrap() - (p1 + p2)).abs() < 1e-9 * scale);
            prop_assert!((scaled.potential(r, z).unwrap() - alpha * p1).abs() < 1e-9 * scale * alpha.abs().max(1.0));
        }
    }

    #[test]
    fn axial_model_is_linear(vs in proptest::collection::vec(-100.0f64..100.0, 15), alpha in -5.0f64..5.0, z in -5e-3f64..5e-3) {
        let m = trap_model();
        let mut v = SegmentVoltages::default();
        for (i, x) in vs.iter().enumerate() {
            v.set(i + 1, *x);
        }
        let p = m.potential(&v, z);
        let ps = m.potential(&v.scaled(alpha), z);
        prop_assert!((ps - alpha * p).abs() <= 1e-12 * (1.0 + p.abs() * alpha.abs()));
        let w = v.scaled(0.5);
        let sum = m.potential(&v.plus(&w), z);
        prop_assert!((sum - 1.5 * p).abs() <= 1e-12 * (1.0 + p.abs()));
    }
}

#[test]
fn filament_kernel_is_symmetric() {
    let set = build_lens_geometry(&LensConfig::default(), 3.0).unwrap();
    let k = filament_kernel_matrix(&set);
    let max = k.amax();
    let asym = (&k - k.transpose()).amax();
    assert!(asym < 1e-8 * max, "{asym} vs {max}");
}

#[test]
fn mesh_refinement_converges_on_axis() {
    let probes = [0.0, 3e-3, 8e-3];
    let axis = |density: f64| -> Vec<f64> {
        let set = build_lens_geometry(&LensConfig::default(), density).unwrap();
        let s = solve_axisymmetric_bem(&set, &volts(0.0, 150.0), &BemOptions::default()).unwrap();
        probes.iter().map(|&z| s.potential(0.0, z).unwrap()).collect()
    };
    let (a, b, c) = (axis(2.0), axis(4.0), axis(8.0));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let (d1, d2) = (diff(&a, &b), diff(&b, &c));
    assert!(d2 < d1, "{d1} then {d2}");
    // observed order in cell size
    assert!((d1 / d2).log2() >= 1.0, "order {}", (d1 / d2).log2());
}

#[test]
fn frozen_axial_calibration_reproduces_targets() {
    let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
    let targets = AxialTargets::default();
    let m = AxialPotentialModel::new(&g, &AxialCalibration::default());
    let s = default_profile_samples(&m);
    let well = |v: &SegmentVoltages| {
        *axial_potential_profile(&m, v, &s, ca40_mass(), ELEMENTARY_CHARGE).well().unwrap()
    };
    let trap = well(&targets.trapping_voltages());
    let f = trap.omega_ax / (2.0 * std::f64::consts::PI);
    assert!((f / 280e3 - 1.0).abs() < 0.05, "{f}");
    assert!((trap.depth_ev / 4.0 - 1.0).abs() < 0.15, "{}", trap.depth_ev);
    let red = well(&targets.reduction_voltages(54.8));
    assert!((red.depth_ev / 0.45 - 1.0).abs() < 0.2, "{}", red.depth_ev);
    // a fresh fit lands on the frozen constants
    let fit = calibrate_axial(&g, &targets, 2.0, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
    let frozen = AxialCalibration::default().experimental;
    assert!((fit.experimental.coupling / frozen.coupling - 1.0).abs() < 1e-4);
    assert!((fit.experimental.falloff_m / frozen.falloff_m - 1.0).abs() < 1e-4);
}

#[test]
fn efficiency_calibration_gives_the_radial_target() {
    // ideal electrodes: q = 2 e V0 / (m r0^2 W^2) evaluated by hand is 0.1656
    let ideal = RfDriveConfig { geometric_efficiency: 1.0, ..RfDriveConfig::default() };
    let q1 = pseudopotential_params(&ideal, ca40_mass(), ELEMENTARY_CHARGE).unwrap().mathieu_q;
    assert!((q1 - 0.1656).abs() < 5e-4, "{q1}");
    let target = 2.0 * std::f64::consts::PI * 430e3;
    let eta = calibrate_efficiency(&ideal, target, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
    assert!((eta - 0.60).abs() < 0.01, "{eta}");
    let rf = RfDriveConfig { geometric_efficiency: eta, ..ideal };
    let p = pseudopotential_params(&rf, ca40_mass(), ELEMENTARY_CHARGE).unwrap();
    assert!((p.omega_rad / target - 1.0).abs() < 1e-12);
    // q = 2 sqrt2 w_rad / W
    let q = 2.0 * std::f64::consts::SQRT_2 * 430e3 / 12.155e6;
    assert!((p.mathieu_q - q).abs() < 1e-12 && (q - 0.100).abs() < 0.005);
}
