use std::path::Path;

use ionfocus::analysis::{erf_model, fit_erf, spot_stats, ErfFitResult};
use ionfocus::config::{solve_lens, RunConfig, Setup};
use ionfocus::constants::{ca40_mass, ELEMENTARY_CHARGE};
use ionfocus::fields::{
    axial_potential_profile, calibrate_axial, calibrate_efficiency, default_profile_samples, pseudopotential_params,
    AxialPotentialModel,
};
use ionfocus::geometry::build_trap_geometry;
use ionfocus::io::{num, opt, read_scan_table, scan_table_csv, Axes, CsvTable, Series, Style};
use ionfocus::protocols::{
    calibrate_energy_scale, calibrate_lens_position, knife_edge_scan, pilot_blade_positions, reference_energy_ev,
    run_aperture_alignment_scan, run_displacement_scan, run_focal_scan, BeamBank, PreparedRamp, ScanTable, Shot,
    SpotRow,
};
use ionfocus::seeds::sub_seed;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bundle::Bundle;
use crate::error::CliError;

pub fn solve_lens_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let lens = solve_lens(config)?;
    let mut panels = CsvTable::new(&[
        ("terminal", "electrode terminal (lens = driven, outer = grounded)"),
        ("r0_m", "panel start radius"),
        ("z0_m", "panel start z, lens-local"),
        ("r1_m", "panel end radius"),
        ("z1_m", "panel end z, lens-local"),
        ("density_c_per_m2", "surface charge density at 1 V on the driven electrode"),
    ])
    .meta("panels", lens.charges.panels.len());
    for p in &lens.charges.panels {
        panels.push(vec![
            p.terminal.clone(),
            num(p.panel.r0),
            num(p.panel.z0),
            num(p.panel.r1),
            num(p.panel.z1),
            num(p.density),
        ]);
    }
    out.csv("panels.csv", &panels)?;

    let opts = lens.map.options;
    let n = ((opts.z_max_m - opts.z_min_m) / 1e-4).round() as usize;
    let mut axis = CsvTable::new(&[
        ("z_m", "lens-local axial position"),
        ("potential_per_v", "on-axis potential per volt on the driven electrode"),
        ("field_z_per_m", "on-axis E_z per volt on the driven electrode"),
    ]);
    let mut curve = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let z = opts.z_min_m + (opts.z_max_m - opts.z_min_m) * i as f64 / n as f64;
        let d = lens.map.axis(z);
        axis.push(vec![num(z), num(d[0]), num(-d[1])]);
        curve.push((z * 1e3, d[0]));
    }
    out.csv("axis.csv", &axis)?;
    out.plot(
        "axis.svg",
        "Einzel lens on-axis potential",
        "z (mm, lens-local)",
        "potential per volt",
        &[Series::new("phi(z) / V", curve, Style::Line)],
    )?;
    let mut by_terminal = std::collections::BTreeMap::<String, f64>::new();
    for p in &lens.charges.panels {
        *by_terminal.entry(p.terminal.clone()).or_default() += p.charge();
    }
    Ok(json!({
        "panels": lens.charges.panels.len(),
        "residual_norm": lens.charges.residual_norm,
        "condition_estimate": lens.charges.condition_estimate,
        "charge_per_terminal_c": by_terminal,
        "axis_peak_potential_per_v": curve_peak(&lens.map, opts.z_min_m, opts.z_max_m),
    }))
}

fn curve_peak(map: &ionfocus::fields::LensFieldMap, lo: f64, hi: f64) -> f64 {
    (0..=4000)
        .map(|i| map.axis(lo + (hi - lo) * i as f64 / 4000.0)[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn calibrate_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let (m, q) = (ca40_mass(), ELEMENTARY_CHARGE);
    let geometry = build_trap_geometry(&config.trap).map_err(ionfocus::protocols::ProtocolError::from)?;
    let axial = calibrate_axial(&geometry, &config.axial_targets, config.calibration.loading_falloff_ratio, m, q)
        .map_err(ionfocus::protocols::ProtocolError::from)?;
    let omega_target = 2.0 * std::f64::consts::PI * config.calibration.radial_frequency_hz;
    let eta = calibrate_efficiency(&config.rf, omega_target, m, q).map_err(ionfocus::protocols::ProtocolError::from)?;
    let mut cal = config.clone();
    cal.axial = axial;
    cal.rf.geometric_efficiency = eta;
    let secular = pseudopotential_params(&cal.rf, m, q).map_err(ionfocus::protocols::ProtocolError::from)?;

    let model = AxialPotentialModel::new(&geometry, &axial);
    let samples = default_profile_samples(&model);
    let trap_v = cal.axial_targets.trapping_voltages();
    let red_v = cal.axial_targets.reduction_voltages(cal.axial_targets.reduction_voltage_v);
    let trap_well = axial_potential_profile(&model, &trap_v, &samples, m, q);
    let red_well = axial_potential_profile(&model, &red_v, &samples, m, q);
    let mut profile = CsvTable::new(&[
        ("z_m", "axial position relative to the centre of electrode 10"),
        ("trapping_ev", "potential energy with the trapping voltages"),
        ("reduced_ev", "potential energy with the reduction voltage added"),
    ]);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..=1000 {
        let z = -5e-3 + 10e-3 * i as f64 / 1000.0;
        let (u, v) = (model.potential(&trap_v, z), model.potential(&red_v, z));
        profile.push(vec![num(z), num(u), num(v)]);
        a.push((z * 1e3, u));
        b.push((z * 1e3, v));
    }
    out.csv("profile.csv", &profile)?;
    out.plot(
        "profile.svg",
        "Axial potential",
        "z (mm)",
        "potential energy (eV)",
        &[
            Series::new("trapping", a, Style::Line),
            Series::new("reduction", b, Style::Line),
        ],
    )?;

    let lens = solve_lens(&cal)?;
    let setup = Setup::with_lens(&cal, lens.clone())?;
    let mut energy_scale = cal.extraction.energy_scale;
    if cal.calibration.fit_energy_scale {
        let build = |e: &ionfocus::protocols::ExtractionConfig| Setup::beamline_for(&cal, &setup.trap_geometry, &lens, e);
        energy_scale = calibrate_energy_scale(build, &cal.extraction, &setup.source, cal.calibration.exit_energy_ev)?;
        cal.extraction.energy_scale = energy_scale;
    }
    let setup = Setup::with_lens(&cal, lens)?;
    let reference_ev = reference_energy_ev(&setup.beamline, &setup.source)?;
    let lens_cal = calibrate_lens_position(
        &setup.beamline,
        &setup.source,
        cal.beamline.lens_voltage_v,
        cal.calibration.lens_shots,
    )?;

    let mut file = toml::Table::new();
    let mut put = |section: &str, value: toml::Value| {
        file.insert(section.to_string(), value);
    };
    put("axial", toml::Value::try_from(axial).expect("serialises"));
    put(
        "rf",
        toml::Value::Table(toml::Table::from_iter([("geometric_efficiency".to_string(), toml::Value::Float(eta))])),
    );
    put(
        "extraction",
        toml::Value::Table(toml::Table::from_iter([("energy_scale".to_string(), toml::Value::Float(energy_scale))])),
    );
    put(
        "beamline",
        toml::Value::Table(toml::Table::from_iter([(
            "lens_position_m".to_string(),
            toml::Value::Float(lens_cal.lens_position_m),
        )])),
    );
    let text = format!(
        "# Calibration written by `ionfocus calibrate`; pass with --calibration.\n{}",
        toml::to_string(&file).expect("serialises")
    );
    out.text("calibration.toml", &text)?;
    Ok(json!({
        "axial": axial,
        "trapping_well": trap_well,
        "reduced_well": red_well,
        "trapping_omega_ax_hz": trap_well.well().map(|w| w.omega_ax / (2.0 * std::f64::consts::PI)),
        "geometric_efficiency": eta,
        "radial_frequency_hz": secular.omega_rad / (2.0 * std::f64::consts::PI),
        "mathieu_q": secular.mathieu_q,
        "energy_scale": energy_scale,
        "reference_energy_ev": reference_ev,
        "lens": lens_cal,
    }))
}

fn shot_rows(shots: &[Shot]) -> (CsvTable, CsvTable) {
    let mut rec = CsvTable::new(&[
        ("sample", "shot index"),
        ("trigger_time_s", "switch trigger time"),
        ("time_of_flight_s", "time from trigger to the detector plane"),
        ("hit_x_m", "x at the detector plane"),
        ("hit_y_m", "y at the detector plane"),
        ("razor_x_m", "x at the razor plane"),
        ("razor_y_m", "y at the razor plane"),
        ("vx_m_per_s", "transverse velocity x at the detector plane"),
        ("vy_m_per_s", "transverse velocity y at the detector plane"),
        ("kinetic_energy_ev", "kinetic energy at the detector plane"),
        ("detected", "1 if the detector registered the ion"),
    ]);
    let mut lost = CsvTable::new(&[("sample", "shot index"), ("reason", "loss reason")]);
    for (k, s) in shots.iter().enumerate() {
        match s {
            Shot::Arrived(r) => rec.push(vec![
                r.sample.to_string(),
                num(r.trigger_time_s),
                num(r.exit_time_s),
                num(r.hit_position_m[0]),
                num(r.hit_position_m[1]),
                num(r.razor_position_m[0]),
                num(r.razor_position_m[1]),
                num(r.transverse_velocity_m_s[0]),
                num(r.transverse_velocity_m_s[1]),
                num(r.kinetic_energy_ev),
                (r.detected as u8).to_string(),
            ]),
            Shot::Lost(reason) => lost.push(vec![
                k.to_string(),
                serde_json::to_value(reason).expect("serialises").as_str().unwrap_or("").to_string(),
            ]),
        }
    }
    (rec, lost)
}

pub fn extract_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let samples: Vec<u64> = (0..config.scans.extract_shots as u64).collect();
    let shots = BeamBank::new().shots(&setup.beamline, &setup.source, &samples)?;
    let (rec, lost) = shot_rows(&shots);
    out.csv("records.csv", &rec)?;
    out.csv("lost.csv", &lost)?;
    let records: Vec<_> = shots.iter().filter_map(|s| s.record().copied()).collect();
    let n = records.len();
    if n == 0 {
        return Err(CliError::Protocol(ionfocus::protocols::ProtocolError::Invalid(
            "no ion reached the detector plane".into(),
        )));
    }
    let mean = |f: &dyn Fn(&ionfocus::protocols::ExtractionRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    let e_mean = mean(&|r| r.kinetic_energy_ev);
    let e_std = (records.iter().map(|r| (r.kinetic_energy_ev - e_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let tof = mean(&|r| r.exit_time_s);
    let detector = spot_stats(&records, setup.beamline.detector_plane_z).ok();
    let at_razor: Vec<_> = records
        .iter()
        .map(|r| ionfocus::protocols::ExtractionRecord {
            hit_position_m: r.razor_position_m,
            detected: true,
            ..*r
        })
        .collect();
    let razor = spot_stats(&at_razor, setup.beamline.razor_plane_z).ok();
    let mut hist = vec![0usize; 40];
    let (lo, hi) = records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.kinetic_energy_ev), b.max(r.kinetic_energy_ev)));
    let width = ((hi - lo) / hist.len() as f64).max(1e-9);
    for r in &records {
        let k = (((r.kinetic_energy_ev - lo) / width) as usize).min(hist.len() - 1);
        hist[k] += 1;
    }
    let pts: Vec<(f64, f64)> = hist.iter().enumerate().map(|(k, c)| (lo + (k as f64 + 0.5) * width, *c as f64)).collect();
    out.plot("energy.svg", "Exit kinetic energy", "kinetic energy (eV)", "ions", &[Series::new("ions per bin", pts, Style::Line)])?;
    Ok(json!({
        "shots": shots.len(),
        "arrived": n,
        "lost": shots.len() - n,
        "detected": records.iter().filter(|r| r.detected).count(),
        "mean_kinetic_energy_ev": e_mean,
        "std_kinetic_energy_ev": e_std,
        "mean_time_of_flight_s": tof,
        "detector_plane_z_m": setup.beamline.detector_plane_z,
        "razor_plane_z_m": setup.beamline.razor_plane_z,
        "detector_spot": detector,
        "razor_spot_all_arrivals": razor,
    }))
}

fn fit_or_flag(table: &ScanTable, config: &RunConfig) -> (Option<ErfFitResult>, Option<String>) {
    match fit_erf(table, &config.fit) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn fit_json(fit: &Option<ErfFitResult>, flag: &Option<String>) -> Value {
    match fit {
        Some(f) => serde_json::to_value(f).expect("serialises"),
        None => json!({ "flag": flag }),
    }
}

fn fit_curve(table: &ScanTable, fit: &ErfFitResult, scale: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = table
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.position), b.max(r.position)));
    (0..=200)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 200.0;
            (x * scale, erf_model(x, fit.a, fit.sigma, fit.c))
        })
        .collect()
}

fn knife_plot(out: &mut Bundle, name: &str, title: &str, table: &ScanTable, fit: &Option<ErfFitResult>) -> Result<(), CliError> {
    let mut series = vec![Series::new(
        "hit fraction",
        table.rows.iter().map(|r| (r.position * 1e6, r.fraction())).collect(),
        Style::Markers,
    )];
    if let Some(f) = fit {
        series.push(Series::new("erf fit", fit_curve(table, f, 1e6), Style::Line));
    }
    out.plot(name, title, "blade position (um)", "hit fraction", &series)
}

pub fn knife_edge_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let mut bank = BeamBank::new();
    let blades = pilot_blade_positions(&setup.beamline, &setup.source, &mut bank, &config.knife_edge)?;
    let table = knife_edge_scan(&setup.beamline, &setup.source, &mut bank, &blades)?;
    out.csv("scan.csv", &scan_table_csv(&table).meta("seed", config.seed))?;
    let (fit, flag) = fit_or_flag(&table, config);
    knife_plot(out, "scan.svg", "Knife-edge scan", &table, &fit)?;
    Ok(json!({
        "rows": table.rows.len(),
        "shots_per_position": config.beamline.shots_per_position,
        "lens_voltage_v": config.beamline.lens_voltage_v,
        "fit": fit_json(&fit, &flag),
    }))
}

fn spot_rows_csv(rows: &[SpotRow], parameter: (&str, &str), extra: Option<(&str, f64)>) -> CsvTable {
    let mut cols = vec![];
    if let Some((name, _)) = extra {
        cols.push((name, "scan group parameter"));
    }
    cols.extend([
        parameter,
        ("sigma_m", "fitted 1-sigma spot radius"),
        ("sigma_lower_m", "lower end of the sigma interval"),
        ("sigma_upper_m", "upper end of the sigma interval"),
        ("offset_m", "fitted edge offset a"),
        ("scale", "fitted plateau c"),
        ("flag", "reason when no fit is available"),
    ]);
    let mut t = CsvTable::new(&cols);
    for r in rows {
        let mut row = vec![];
        if let Some((_, v)) = extra {
            row.push(num(v));
        }
        let f = r.fit.as_ref();
        row.extend([
            num(r.parameter),
            opt(f.map(|f| f.sigma)),
            opt(f.map(|f| f.sigma_interval.lower)),
            opt(f.map(|f| f.sigma_interval.upper)),
            opt(f.map(|f| f.a)),
            opt(f.map(|f| f.c)),
            r.flag.clone().unwrap_or_default(),
        ]);
        t.push(row);
    }
    t
}

fn spot_tables_csv(groups: &[(f64, &[SpotRow])], group: &str, parameter: &str) -> CsvTable {
    let mut t = CsvTable::new(&[
        (group, "scan group parameter"),
        (parameter, "scanned parameter"),
        ("blade_position_m", "blade position"),
        ("shots", "ions fired"),
        ("hits", "ions counted"),
    ]);
    for (g, rows) in groups {
        for r in rows.iter() {
            if let Some(table) = &r.table {
                for row in &table.rows {
                    t.push(vec![num(*g), num(r.parameter), num(row.position), row.shots.to_string(), row.hits.to_string()]);
                }
            }
        }
    }
    t
}

pub fn focal_scan_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let scan = run_focal_scan(&setup.beamline, &setup.source, &config.scans.focal_voltages_v, &config.knife_edge, &config.fit)?;
    out.csv("focal_scan.csv", &spot_rows_csv(&scan.rows, ("lens_voltage_v", "lens voltage"), None))?;
    out.csv(
        "knife_edges.csv",
        &spot_tables_csv(&[(config.beamline.beam_displacement_at_lens_m, &scan.rows)], "displacement_m", "lens_voltage_v"),
    )?;
    let pts = scan
        .rows
        .iter()
        .filter_map(|r| r.sigma().map(|s| (r.parameter, s * 1e6)))
        .collect();
    out.plot("focal_scan.svg", "Spot size against lens voltage", "lens voltage (V)", "sigma (um)", &[Series::new("fitted sigma", pts, Style::Markers)])?;
    let rows: Vec<Value> = scan
        .rows
        .iter()
        .map(|r| json!({ "lens_voltage_v": r.parameter, "fit": fit_json(&r.fit, &r.flag) }))
        .collect();
    Ok(json!({ "best_voltage_v": scan.best_voltage, "rows": rows }))
}

pub fn displacement_scan_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let mut summary = Vec::new();
    let mut scans = Vec::new();
    for &temperature in &config.scans.displacement_temperatures_k {
        let mut source = setup.source;
        source.thermal.temperature_k = temperature;
        let scan = run_displacement_scan(
            &setup.beamline,
            &source,
            &config.scans.displacements_m,
            config.displacement_deflection(),
            &config.knife_edge,
            &config.fit,
        )?;
        summary.push(json!({
            "temperature_k": temperature,
            "deflection_voltages_v": scan.deflection_voltages_v,
            "rows": scan.rows.iter().map(|r| json!({ "displacement_m": r.parameter, "fit": fit_json(&r.fit, &r.flag) })).collect::<Vec<_>>(),
        }));
        scans.push(scan);
    }
    let mut rows = spot_rows_csv(&[], ("displacement_m", "displacement in the lens principal plane"), Some(("temperature_k", 0.0)));
    for s in &scans {
        let t = spot_rows_csv(&s.rows, ("displacement_m", ""), Some(("temperature_k", s.temperature_k)));
        rows.rows.extend(t.rows);
    }
    out.csv("displacement_scan.csv", &rows)?;
    let groups: Vec<(f64, &[SpotRow])> = scans.iter().map(|s| (s.temperature_k, s.rows.as_slice())).collect();
    out.csv("knife_edges.csv", &spot_tables_csv(&groups, "temperature_k", "displacement_m"))?;
    let series: Vec<Series> = scans
        .iter()
        .map(|s| {
            Series::new(
                &format!("T = {} K", s.temperature_k),
                s.rows.iter().filter_map(|r| r.sigma().map(|v| (r.parameter * 1e6, v))).collect(),
                Style::Line,
            )
        })
        .collect();
    let axes = Axes { x_log: false, y_log: true };
    out.plot_axes("displacement_scan.svg", "Spot size against displacement", "displacement (um)", "sigma (m)", &series, axes)?;
    Ok(json!({ "scans": summary }))
}

pub fn reduce_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup_geometry = build_trap_geometry(&config.trap).map_err(ionfocus::protocols::ProtocolError::from)?;
    let model = AxialPotentialModel::new(&setup_geometry, &config.axial);
    let omega = pseudopotential_params(&config.rf, ca40_mass(), ELEMENTARY_CHARGE)
        .map_err(ionfocus::protocols::ProtocolError::from)?
        .omega_rad;
    let trap = ionfocus::protocols::ReductionTrap::new(
        model,
        config.axial_targets.trapping_voltages(),
        &config.reduction.ramp.ramp_electrodes,
        omega,
        ca40_mass(),
        ELEMENTARY_CHARGE,
    )?;
    let prep = PreparedRamp::new(&trap, &config.reduction.ramp)?;
    let jobs: Vec<(usize, usize)> = config
        .reduction
        .ion_counts
        .iter()
        .flat_map(|&n| (0..config.reduction.trials).map(move |k| (n, k)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(n, k)| prep.run(n, &config.source, reduction_seed(config.seed, n, k)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut t = CsvTable::new(&[
        ("n_ions", "initial crystal size"),
        ("trial", "trial index"),
        ("remaining", "ions left after the ramp"),
        ("removed", "ions that crossed a barrier"),
        ("first_removal_s", "time of the first removal"),
    ])
    .meta("regime", "secular")
    .meta("dt_s", num(prep.dt()));
    for (&(n, k), o) in jobs.iter().zip(&outcomes) {
        t.push(vec![
            n.to_string(),
            k.to_string(),
            o.remaining.to_string(),
            o.removed.len().to_string(),
            opt(o.removed.first().map(|r| r.time_s)),
        ]);
    }
    out.csv("trials.csv", &t)?;
    let mut per_n = Vec::new();
    let mut pts = Vec::new();
    for &n in &config.reduction.ion_counts {
        let these: Vec<_> = jobs.iter().zip(&outcomes).filter(|((m, _), _)| *m == n).map(|(_, o)| o).collect();
        let trials = these.len();
        let one = these.iter().filter(|o| o.remaining == 1).count();
        let mut hist = std::collections::BTreeMap::<usize, usize>::new();
        for o in &these {
            *hist.entry(o.remaining).or_default() += 1;
        }
        pts.push((n as f64, one as f64 / trials.max(1) as f64));
        per_n.push(json!({
            "n_ions": n,
            "trials": trials,
            "exactly_one": one,
            "fraction_exactly_one": one as f64 / trials.max(1) as f64,
            "remaining_histogram": hist,
        }));
    }
    out.plot("reduction.svg", "Reduction to a single ion", "initial ions", "fraction with exactly one left", &[Series::new("exactly one", pts, Style::Markers)])?;
    Ok(json!({
        "regime": "secular",
        "dt_s": prep.dt(),
        "steps": outcomes.first().map(|o| o.steps),
        "results": per_n,
    }))
}

pub fn reduction_seed(master: u64, n: usize, trial: usize) -> u64 {
    sub_seed(master, &[0x7ed, n as u64, trial as u64])
}

pub fn align_cmd(config: &RunConfig, out: &mut Bundle) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let map = run_aperture_alignment_scan(
        &setup.beamline,
        &setup.source,
        &config.scans.alignment_grid_x_v,
        &config.scans.alignment_grid_y_v,
        config.scans.alignment_shots as u64,
        config.scans.alignment_aperture_radius_m,
    )?;
    let mut t = CsvTable::new(&[
        ("deflection_x_v", "deflection voltage x"),
        ("deflection_y_v", "deflection voltage y"),
        ("shots", "ions fired"),
        ("hits", "ions through the aperture and detected"),
        ("rate", "hit fraction"),
    ])
    .meta("aperture_radius_m", num(map.aperture_radius_m));
    for c in &map.cells {
        t.push(vec![num(c.deflection_v[0]), num(c.deflection_v[1]), c.shots.to_string(), c.hits.to_string(), num(c.rate())]);
    }
    out.csv("alignment.csv", &t)?;
    let y_best = config
        .scans
        .alignment_grid_y_v
        .iter()
        .copied()
        .min_by(|a, b| (a - map.argmax_v[1]).abs().total_cmp(&(b - map.argmax_v[1]).abs()))
        .unwrap_or(0.0);
    let pts = map
        .cells
        .iter()
        .filter(|c| c.deflection_v[1] == y_best)
        .map(|c| (c.deflection_v[0] * 1e3, c.rate()))
        .collect();
    out.plot(
        "alignment.svg",
        &format!("Hit rate through the aperture at V_y = {} mV", y_best * 1e3),
        "deflection voltage x (mV)",
        "hit fraction",
        &[Series::new("hit fraction", pts, Style::Line)],
    )?;
    Ok(json!({
        "argmax_v": map.argmax_v,
        "max_rate": map.max_rate,
        "aperture_radius_m": map.aperture_radius_m,
        "cells": map.cells.len(),
    }))
}

pub fn analyze_cmd(config: &RunConfig, input: &Path, out: &mut Bundle) -> Result<Value, CliError> {
    let table = read_scan_table(input)?;
    let fit = fit_erf(&table, &config.fit)?;
    let mut t = scan_table_csv(&table);
    t.columns.push(("model".into(), "fitted hit fraction".into()));
    for (row, r) in t.rows.iter_mut().zip(&table.rows) {
        row.push(num(fit.predict(r.position)));
    }
    out.csv("scan.csv", &t)?;
    knife_plot(out, "scan.svg", "Knife-edge fit", &table, &Some(fit.clone()))?;
    Ok(json!({
        "input": input.display().to_string(),
        "rows": table.rows.len(),
        "fit": fit,
    }))
}
