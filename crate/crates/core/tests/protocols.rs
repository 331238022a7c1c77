use std::sync::OnceLock;

use ionfocus::analysis::tof_to_energy;
use ionfocus::config::{solve_lens, LensSolution, RunConfig, Setup};
use ionfocus::constants::{ca40_mass, joule_to_ev};
use ionfocus::protocols::{
    calibrate_energy_scale, calibrate_lens_position, reference_energy_ev, run_aperture_alignment_scan,
    run_displacement_scan, run_focal_scan, run_knife_edge, BeamBank, ExtractionConfig, ExtractionRecord,
    LensOutcome, Shot, TrapOutcome, FROZEN_LENS_POSITION_M,
};

fn lens() -> LensSolution {
    static LENS: OnceLock<LensSolution> = OnceLock::new();
    LENS.get_or_init(|| solve_lens(&RunConfig::default()).unwrap()).clone()
}

fn setup(edit: impl FnOnce(&mut RunConfig)) -> Setup {
    let mut c = RunConfig::default();
    edit(&mut c);
    Setup::with_lens(&c, lens()).unwrap()
}

fn records(s: &Setup, n: u64) -> Vec<ExtractionRecord> {
    let samples: Vec<u64> = (0..n).collect();
    BeamBank::new()
        .shots(&s.beamline, &s.source, &samples)
        .unwrap()
        .iter()
        .filter_map(Shot::record)
        .copied()
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Upper binomial bound on a hit fraction at `shots` draws.
fn slack(p: f64, shots: f64) -> f64 {
    4.0 * (p * (1.0 - p) / shots).sqrt()
}

#[test]
fn exit_energy_is_in_band_and_time_of_flight_round_trips() {
    let s = setup(|c| c.beamline.lens_voltage_v = 0.0);
    let recs = records(&s, 200);
    assert!(recs.len() >= 190);
    let e = mean(recs.iter().map(|r| r.kinetic_energy_ev));
    assert!((40.0..=120.0).contains(&e), "{e}");
    for r in &recs {
        // the acceleration phase only lengthens the flight from the trigger
        let from_tof = tof_to_energy(r.exit_time_s, r.plane_z_m, ca40_mass()).unwrap();
        let deficit = 1.0 - from_tof / r.kinetic_energy_ev;
        assert!(deficit > 0.0 && deficit < 0.03, "{from_tof} vs {}", r.kinetic_energy_ev);
    }
    // field-free segment from the trap exit to the detector
    for sample in 0..20 {
        let TrapOutcome::Exited(exit) = s.source.extract(&s.beamline, sample).unwrap() else {
            panic!("sample {sample} lost in the trap");
        };
        let LensOutcome::Arrived { detector, .. } = s.beamline.downstream(&exit) else {
            panic!("sample {sample} lost downstream");
        };
        let length = (detector.position - exit.state.position).norm();
        let from_tof = tof_to_energy(detector.time - exit.time, length, ca40_mass()).unwrap();
        let e = joule_to_ev(exit.state.kinetic_energy());
        assert!((from_tof / e - 1.0).abs() < 1e-6, "{from_tof} vs {e}");
    }
}

#[test]
fn energy_scale_pins_eighty_electronvolts() {
    let s = setup(|_| {});
    let build = |x: &ExtractionConfig| Setup::beamline_for(&s.config, &s.trap_geometry, &s.lens, x);
    let scale = calibrate_energy_scale(build, &s.config.extraction, &s.source, 80.0).unwrap();
    assert!(scale > 0.0 && scale < 1.0, "{scale}");
    let cal = setup(|c| c.extraction.energy_scale = scale);
    let e = reference_energy_ev(&cal.beamline, &cal.source).unwrap();
    assert!((e / 80.0 - 1.0).abs() < 0.02);
    // closed form: 0.287 m at the speed of an 80 eV calcium ion
    let v = (2.0 * 80.0 * 1.602_176_634e-19 / ca40_mass()).sqrt();
    let closed = 0.287 / v;
    assert!((closed / 14.6e-6 - 1.0).abs() < 0.01);
    let free = setup(|c| {
        c.extraction.energy_scale = scale;
        c.beamline.lens_voltage_v = 0.0;
    });
    let tof_free = mean(records(&free, 100).iter().map(|r| r.exit_time_s));
    assert!((tof_free / closed - 1.0).abs() < 0.02, "{tof_free}");
    // the lens decelerates the ion on the way through
    let tof_lens = mean(records(&cal, 100).iter().map(|r| r.exit_time_s));
    assert!(tof_lens > tof_free, "{tof_lens} vs {tof_free}");
}

#[test]
fn fresh_lens_position_matches_the_frozen_value() {
    let s = setup(|_| {});
    let cal = calibrate_lens_position(&s.beamline, &s.source, 150.0, s.config.calibration.lens_shots).unwrap();
    assert!((cal.lens_position_m - FROZEN_LENS_POSITION_M).abs() < 1e-4, "{}", cal.lens_position_m);
    assert!(cal.virtual_source.z < s.beamline.trap.exit_z() + 0.05);
}

#[test]
fn knife_edge_limits_and_determinism() {
    let s = setup(|c| c.beamline.shots_per_position = 400);
    let eff = s.config.beamline.detector_efficiency;
    let t = run_knife_edge(&s.beamline, &s.source, &[-1.0, 0.0, 1.0]).unwrap();
    let f: Vec<f64> = t.rows.iter().map(|r| r.fraction()).collect();
    assert_eq!(t.rows[0].hits, 0);
    assert!((f[1] - 0.5 * eff).abs() < slack(0.5 * eff, 400.0) + 0.05, "{}", f[1]);
    assert!((f[2] - eff).abs() < slack(eff, 400.0), "{}", f[2]);
    for r in &t.rows {
        assert!(r.hits <= r.shots);
        assert!(r.fraction() <= eff + slack(eff, r.shots as f64));
    }
    assert_eq!(t, run_knife_edge(&s.beamline, &s.source, &[-1.0, 0.0, 1.0]).unwrap());
}

#[test]
fn spot_grows_with_source_temperature() {
    let sigma = |t: f64| {
        let s = setup(|c| c.source.temperature_k = t);
        let d = run_displacement_scan(&s.beamline, &s.source, &[0.0], None, &s.config.knife_edge, &s.config.fit).unwrap();
        d.rows[0].sigma().unwrap()
    };
    let (a, b, c) = (sigma(100e-6), sigma(2e-3), sigma(20e-3));
    assert!(a <= b && b <= c, "{a} {b} {c}");
}

#[test]
fn spot_grows_with_displacement() {
    let s = setup(|_| {});
    let d: Vec<f64> = (0..=4).map(|i| 0.25e-3 * i as f64).collect();
    let scan = run_displacement_scan(
        &s.beamline,
        &s.source,
        &d,
        s.config.displacement_deflection(),
        &s.config.knife_edge,
        &s.config.fit,
    )
    .unwrap();
    let sig: Vec<f64> = scan.rows.iter().map(|r| r.sigma().unwrap()).collect();
    assert!(sig.windows(2).all(|w| w[1] >= w[0]), "{sig:?}");
}

#[test]
fn focal_scan_has_an_interior_minimum() {
    let s = setup(|_| {});
    let v = [100.0, 125.0, 150.0, 175.0, 200.0];
    let scan = run_focal_scan(&s.beamline, &s.source, &v, &s.config.knife_edge, &s.config.fit).unwrap();
    assert_eq!(scan.best_voltage, Some(150.0));
    assert!(run_focal_scan(&s.beamline, &s.source, &[150.0, 100.0], &s.config.knife_edge, &s.config.fit).is_err());
}

#[test]
fn alignment_argmax_follows_the_beam_displacement() {
    let grid: Vec<f64> = (-35..=35).map(|i| 0.01 * i as f64).collect();
    let argmax = |delta: f64| {
        let s = setup(|c| c.beamline.beam_displacement_at_lens_m = delta);
        let m = run_aperture_alignment_scan(&s.beamline, &s.source, &grid, &[0.0], 10, 0.5e-3).unwrap();
        assert!(m.max_rate > 0.0);
        m.argmax_v
    };
    let a0 = argmax(0.0);
    assert!(a0[0].abs() <= 0.01 && a0[1] == 0.0, "{a0:?}");
    let (a1, a2) = (argmax(0.3e-3)[0] - a0[0], argmax(0.6e-3)[0] - a0[0]);
    assert!(a1 < 0.0, "steering must oppose the displacement: {a1}");
    assert!((a2 / a1 - 2.0).abs() < 0.3, "{a1} {a2}");
}

#[test]
fn alignment_rate_is_bounded_by_the_efficiency() {
    let s = setup(|_| {});
    let eff = s.config.beamline.detector_efficiency;
    let m = run_aperture_alignment_scan(&s.beamline, &s.source, &[-0.1, 0.0, 0.1], &[0.0], 400, 0.5e-3).unwrap();
    assert!(m.max_rate <= eff + slack(eff, 400.0), "{}", m.max_rate);
    assert!(m.argmax_v[0].abs() < 1e-12);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn hit_fraction_never_exceeds_the_efficiency(
            lens_v in 0.0f64..250.0,
            displacement in 0.0f64..1e-3,
            deflection in -0.2f64..0.2,
            eff in 0.2f64..1.0,
        ) {
            let s = setup(|c| {
                c.beamline.shots_per_position = 300;
                c.beamline.lens_voltage_v = lens_v;
                c.beamline.beam_displacement_at_lens_m = displacement;
                c.beamline.deflection_voltages_v = [deflection, 0.0];
                c.beamline.detector_efficiency = eff;
            });
            let t = run_knife_edge(&s.beamline, &s.source, &[1.0]).unwrap();
            prop_assert!(t.rows[0].fraction() <= eff + slack(eff, 300.0));
        }
    }
}
