//! Calibrations of the beam line against its operating point: the lens
//! position that images the source onto the razor plane, and the optional
//! scale that pins the mean exit energy.

use serde::{Deserialize, Serialize};

use super::bank::{BeamBank, ShotSource};
use super::{Beamline, ExtractionConfig, LensOutcome, ProtocolError, TrapOutcome};
use crate::constants::joule_to_ev;
use crate::dynamics::{IonState, ThermalSource, TriggerModel, Vec3};
use crate::numerics::brent_root;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualSource {
    /// Axial position of the beam waist when the exit rays are traced back.
    pub z: f64,
    pub mean_energy_ev: f64,
    pub angular_spread_rad: f64,
    pub count: usize,
}

/// Waist of the extracted beam from trap exit states, where the pooled
/// x and y variance of straight-line back-projections is smallest.
pub fn virtual_source(beamline: &Beamline, source: &ShotSource, shots: usize) -> Result<VirtualSource, ProtocolError> {
    let mut bank = BeamBank::new();
    let samples: Vec<u64> = (0..shots as u64).collect();
    bank.fill(beamline, source, &samples)?;
    let exits: Vec<IonState> = samples
        .iter()
        .filter_map(|s| match bank.get(*s) {
            Some(TrapOutcome::Exited(e)) => Some(e.state),
            _ => None,
        })
        .collect();
    if exits.len() < 3 {
        return Err(ProtocolError::Calibration("too few extracted ions for the virtual source".into()));
    }
    let z_ref = beamline.trap.exit_z();
    // (x, theta) at the common reference plane, both transverse axes pooled
    let mut pairs = Vec::with_capacity(2 * exits.len());
    let mut energy = 0.0;
    for s in &exits {
        let dz = z_ref - s.position.z;
        for k in 0..2 {
            let th = s.velocity[k] / s.velocity.z;
            pairs.push((s.position[k] + th * dz, th));
        }
        energy += joule_to_ev(s.kinetic_energy());
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - mt)).sum::<f64>() / n;
    let var_t = pairs.iter().map(|p| (p.1 - mt).powi(2)).sum::<f64>() / n;
    if !(var_t > 0.0) {
        return Err(ProtocolError::Calibration("beam has no angular spread".into()));
    }
    Ok(VirtualSource {
        z: z_ref - cov / var_t,
        mean_energy_ev: energy / exits.len() as f64,
        angular_spread_rad: var_t.sqrt(),
        count: exits.len(),
    })
}

/// Transverse offset at the razor plane of a paraxial ray from the virtual
/// source with the lens origin at `lens_z`.
fn paraxial_miss(beamline: &Beamline, vs: &VirtualSource, lens_z: f64, voltage: f64, angle: f64) -> Option<f64> {
    let mut lens = beamline.lens.clone();
    lens.lens_z = lens_z;
    let mass = crate::constants::ca40_mass();
    let speed = (2.0 * crate::constants::ev_to_joule(vs.mean_energy_ev) / mass).sqrt();
    let z0 = lens_z + lens.map.options.z_min_m;
    let ion = IonState {
        position: Vec3::new(angle * (z0 - vs.z), 0.0, z0),
        velocity: speed * Vec3::new(angle, 0.0, 1.0).normalize(),
        mass,
        charge: crate::constants::ELEMENTARY_CHARGE,
    };
    match lens.propagate(&ion, 0.0, voltage, beamline.razor_plane_z, beamline.detector_plane_z) {
        LensOutcome::Arrived { razor, .. } => Some(razor.position.x / angle),
        LensOutcome::Lost(_) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensCalibration {
    pub virtual_source: VirtualSource,
    /// Lens-local origin in the trap frame.
    pub lens_position_m: f64,
    pub voltage_v: f64,
}

/// Place the lens so a paraxial ray from the virtual source is imaged onto
/// the razor plane at `voltage`. Of the two conjugate solutions the one
/// closer to the razor plane is taken.
pub fn calibrate_lens_position(
    beamline: &Beamline,
    source: &ShotSource,
    voltage: f64,
    shots: usize,
) -> Result<LensCalibration, ProtocolError> {
    let vs = virtual_source(beamline, source, shots)?;
    let angle = 1e-4;
    let opts = beamline.lens.map.options;
    let z_hi = beamline.razor_plane_z - beamline.lens_length - 1e-3;
    let z_lo = beamline.trap.exit_z() - opts.z_min_m;
    if !(z_hi > z_lo) {
        return Err(ProtocolError::Calibration("no room for the lens between trap and razor".into()));
    }
    let miss = |z: f64| paraxial_miss(beamline, &vs, z, voltage, angle);
    // walk upstream from the razor plane to the first sign change
    let steps = 200;
    let mut prev = (z_hi, miss(z_hi));
    for i in 1..=steps {
        let z = z_hi - (z_hi - z_lo) * i as f64 / steps as f64;
        let cur = (z, miss(z));
        if let (Some(a), Some(b)) = (prev.1, cur.1) {
            if a * b <= 0.0 {
                let root = brent_root(|z| miss(z).unwrap_or(f64::NAN), cur.0, prev.0, 1e-9, 200)
                    .ok_or_else(|| ProtocolError::Calibration("lens position root search failed".into()))?;
                return Ok(LensCalibration {
                    virtual_source: vs,
                    lens_position_m: root,
                    voltage_v: voltage,
                });
            }
        }
        prev = cur;
    }
    Err(ProtocolError::Calibration(format!(
        "no lens position images the source onto the razor plane at {voltage} V"
    )))
}

/// Exit energy of the reference ion (zero temperature, no trigger jitter).
pub fn reference_energy_ev(beamline: &Beamline, source: &ShotSource) -> Result<f64, ProtocolError> {
    let ideal = ShotSource {
        thermal: ThermalSource { temperature_k: 0.0, ..source.thermal },
        trigger: TriggerModel { jitter_sigma_s: 0.0, ..source.trigger },
        ..*source
    };
    match ideal.extract(beamline, 0)? {
        TrapOutcome::Exited(e) => Ok(joule_to_ev(e.state.kinetic_energy())),
        TrapOutcome::Lost(r) => Err(ProtocolError::Calibration(format!("reference ion lost: {r:?}"))),
    }
}

/// Energy scale on the switched electrodes that gives the reference ion
/// `target_ev`, by secant iteration.
pub fn calibrate_energy_scale(
    build: impl Fn(&ExtractionConfig) -> Result<Beamline, ProtocolError>,
    base: &ExtractionConfig,
    source: &ShotSource,
    target_ev: f64,
) -> Result<f64, ProtocolError> {
    let energy = |scale: f64| -> Result<f64, ProtocolError> {
        let cfg = ExtractionConfig { energy_scale: scale, ..base.clone() };
        reference_energy_ev(&build(&cfg)?, source)
    };
    let mut s0 = base.energy_scale;
    let mut e0 = energy(s0)? - target_ev;
    let mut s1 = s0 * (target_ev / (e0 + target_ev));
    for _ in 0..30 {
        let e1 = energy(s1)? - target_ev;
        if e1.abs() < 1e-9 * target_ev {
            return Ok(s1);
        }
        let slope = (e1 - e0) / (s1 - s0);
        if !(slope.is_finite() && slope != 0.0) {
            break;
        }
        (s0, e0) = (s1, e1);
        s1 -= e1 / slope;
        if !(s1 > 0.0) {
            break;
        }
    }
    Err(ProtocolError::Calibration(format!("energy scale for {target_ev} eV did not converge")))
}
