//! Segment-basis model of the trap's axial potential.

use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::constants::ELEMENTARY_CHARGE;
use crate::geometry::{TrapGeometry, TrapZone};
use crate::numerics::{golden_min, levenberg_marquardt};

/// Experimental-zone coupling from the three-target fit.
pub const FROZEN_COUPLING: f64 = 0.390_487;
/// Experimental-zone falloff length (m) from the three-target fit.
pub const FROZEN_FALLOFF_M: f64 = 0.530_499e-3;
/// RF geometric efficiency giving a 430 kHz pseudopotential frequency.
pub const FROZEN_GEOMETRIC_EFFICIENCY: f64 = 0.604_034;

pub const SEGMENT_COUNT: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneCoupling {
    pub coupling: f64,
    pub falloff_m: f64,
}

/// Calibration constants of the axial basis. Only the experimental zone is
/// fitted; loading-zone falloff scales with the blade separation and the
/// taper takes the mean of both zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxialCalibration {
    pub experimental: ZoneCoupling,
    pub loading_falloff_ratio: f64,
}

impl Default for AxialCalibration {
    fn default() -> Self {
        Self {
            experimental: ZoneCoupling {
                coupling: FROZEN_COUPLING,
                falloff_m: FROZEN_FALLOFF_M,
            },
            loading_falloff_ratio: 2.0,
        }
    }
}

impl AxialCalibration {
    pub fn zone(&self, zone: TrapZone) -> ZoneCoupling {
        let exp = self.experimental;
        let load = ZoneCoupling {
            coupling: exp.coupling,
            falloff_m: exp.falloff_m * self.loading_falloff_ratio,
        };
        match zone {
            TrapZone::Loading => load,
            TrapZone::Taper => ZoneCoupling {
                coupling: 0.5 * (load.coupling + exp.coupling),
                falloff_m: 0.5 * (load.falloff_m + exp.falloff_m),
            },
            TrapZone::Experimental | TrapZone::Deflection => exp,
        }
    }
}

/// Voltages on electrodes 1..=15 (stored zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentVoltages(pub [f64; SEGMENT_COUNT]);

impl SegmentVoltages {
    pub fn from_pairs(pairs: &[(usize, f64)]) -> Self {
        let mut v = [0.0; SEGMENT_COUNT];
        for &(i, volts) in pairs {
            assert!((1..=SEGMENT_COUNT).contains(&i), "electrode {i} out of range");
            v[i - 1] += volts;
        }
        Self(v)
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index - 1]
    }

    pub fn set(&mut self, index: usize, volts: f64) {
        self.0[index - 1] = volts;
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.map(|v| v * alpha))
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(other.0) {
            *a += b;
        }
        Self(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentBasis {
    pub index: usize,
    pub center: f64,
    pub width: f64,
    pub coupling: f64,
    pub falloff: f64,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic function and its first three derivatives.
fn logistic_derivs(x: f64) -> [f64; 4] {
    let s = logistic(x);
    let s1 = s * (1.0 - s);
    [s, s1, s1 * (1.0 - 2.0 * s), s1 * (1.0 - 6.0 * s + 6.0 * s * s)]
}

impl SegmentBasis {
    pub fn value(&self, z: f64) -> f64 {
        let a = (z - self.center + 0.5 * self.width) / self.falloff;
        let b = (z - self.center - 0.5 * self.width) / self.falloff;
        self.coupling * (logistic(a) - logistic(b))
    }

    /// phi and its first three z-derivatives.
    pub fn derivatives(&self, z: f64) -> [f64; 4] {
        let a = (z - self.center + 0.5 * self.width) / self.falloff;
        let b = (z - self.center - 0.5 * self.width) / self.falloff;
        let (da, db) = (logistic_derivs(a), logistic_derivs(b));
        let mut out = [0.0; 4];
        let mut scale = self.coupling;
        for k in 0..4 {
            out[k] = scale * (da[k] - db[k]);
            scale /= self.falloff;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialPotentialModel {
    pub basis: Vec<SegmentBasis>,
}

impl AxialPotentialModel {
    pub fn new(geometry: &TrapGeometry, calibration: &AxialCalibration) -> Self {
        let basis = geometry
            .segments
            .iter()
            .map(|s| {
                let zc = calibration.zone(TrapGeometry::zone(s.index));
                SegmentBasis {
                    index: s.index,
                    center: s.center,
                    width: s.width,
                    coupling: zc.coupling,
                    falloff: zc.falloff_m,
                }
            })
            .collect();
        Self { basis }
    }

    pub fn segment(&self, index: usize) -> &SegmentBasis {
        &self.basis[index - 1]
    }

    pub fn potential(&self, voltages: &SegmentVoltages, z: f64) -> f64 {
        self.basis
            .iter()
            .zip(voltages.0)
            .filter(|(_, v)| *v != 0.0)
            .map(|(b, v)| v * b.value(z))
            .sum()
    }

    /// Potential and its first three z-derivatives.
    pub fn derivatives(&self, voltages: &SegmentVoltages, z: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (b, v) in self.basis.iter().zip(voltages.0) {
            if v != 0.0 {
                let d = b.derivatives(z);
                for k in 0..4 {
                    out[k] += v * d[k];
                }
            }
        }
        out
    }

    /// Axial extent spanned by electrodes 1 to 14.
    pub fn extent(&self) -> (f64, f64) {
        let first = &self.basis[0];
        let last = &self.basis[13];
        (
            first.center - 0.5 * first.width,
            last.center + 0.5 * last.width,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellReport {
    pub well_z: f64,
    /// Barrier from the minimum to the lower of the two confining maxima, in
    /// eV for the given charge.
    pub depth_ev: f64,
    pub omega_ax: f64,
    pub left_barrier_z: f64,
    pub right_barrier_z: f64,
    /// Potential energy at the minimum in eV.
    pub minimum_ev: f64,
}

impl WellReport {
    /// Position of the lower escape barrier.
    pub fn saddle_z(&self, model: &AxialPotentialModel, voltages: &SegmentVoltages) -> f64 {
        let l = model.potential(voltages, self.left_barrier_z);
        let r = model.potential(voltages, self.right_barrier_z);
        if l <= r {
            self.left_barrier_z
        } else {
            self.right_barrier_z
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AxialProfile {
    Bound(WellReport),
    Unbound,
}

impl AxialProfile {
    pub fn well(&self) -> Option<&WellReport> {
        match self {
            AxialProfile::Bound(w) => Some(w),
            AxialProfile::Unbound => None,
        }
    }
}

/// Uniform 1 um sampling over electrodes 1 to 14.
pub fn default_profile_samples(model: &AxialPotentialModel) -> Vec<f64> {
    let (a, b) = model.extent();
    let n = ((b - a) / 1e-6).ceil() as usize;
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Locate the deepest axial well for a particle of the given charge and mass.
pub fn axial_potential_profile(
    model: &AxialPotentialModel,
    voltages: &SegmentVoltages,
    z_samples: &[f64],
    mass: f64,
    charge: f64,
) -> AxialProfile {
    if z_samples.len() < 3 {
        return AxialProfile::Unbound;
    }
    let sign = charge.signum();
    let qe = charge / ELEMENTARY_CHARGE;
    let u: Vec<f64> = z_samples
        .iter()
        .map(|&z| sign * model.potential(voltages, z))
        .collect();
    let n = u.len();
    // interior local minima (plateaus resolved by strict-then-nonstrict comparison)
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        if u[i] < u[i - 1] && u[i] <= u[i + 1] {
            let left = u[..i].iter().cloned().fold(f64::MIN, f64::max);
            let right = u[i + 1..].iter().cloned().fold(f64::MIN, f64::max);
            let depth = left.min(right) - u[i];
            let tiny = 1e-12 * u.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
            if depth <= tiny {
                continue;
            }
            let better = match best {
                None => true,
                Some((j, _)) => u[i] < u[j] || (u[i] == u[j] && z_samples[i].abs() < z_samples[j].abs()),
            };
            if better {
                best = Some((i, depth));
            }
        }
    }
    let Some((i0, _)) = best else {
        return AxialProfile::Unbound;
    };
    let f = |z: f64| sign * model.potential(voltages, z);
    let (zmin, umin) = golden_min(f, z_samples[i0 - 1], z_samples[i0 + 1], 1e-13);
    let argmax = |range: std::ops::Range<usize>| {
        range
            .max_by(|&a, &b| u[a].total_cmp(&u[b]))
            .expect("non-empty side")
    };
    let il = argmax(0..i0);
    let ir = argmax(i0 + 1..n);
    let refine_max = |i: usize| {
        if i == 0 || i == n - 1 {
            (z_samples[i], u[i])
        } else {
            let (z, negu) = golden_min(|z| -f(z), z_samples[i - 1], z_samples[i + 1], 1e-13);
            (z, -negu)
        }
    };
    let (zl, ul) = refine_max(il);
    let (zr, ur) = refine_max(ir);
    let depth_v = ul.min(ur) - umin;
    let curvature = sign * model.derivatives(voltages, zmin)[2];
    let omega_ax = (charge.abs() * curvature.max(0.0) / mass).sqrt();
    AxialProfile::Bound(WellReport {
        well_z: zmin,
        depth_ev: depth_v * qe.abs(),
        omega_ax,
        left_barrier_z: zl,
        right_barrier_z: zr,
        minimum_ev: umin * qe.abs(),
    })
}

/// Calibration targets: trapping configuration with its frequency and
/// depth, plus a reduced-depth configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxialTargets {
    pub trapping_voltage_v: f64,
    pub trapping_electrodes: Vec<usize>,
    pub omega_ax_hz: f64,
    pub trapping_depth_ev: f64,
    pub reduction_voltage_v: f64,
    pub reduction_electrodes: Vec<usize>,
    pub reduction_depth_ev: f64,
}

impl Default for AxialTargets {
    fn default() -> Self {
        Self {
            trapping_voltage_v: 35.0,
            trapping_electrodes: vec![7, 13],
            omega_ax_hz: 280e3,
            trapping_depth_ev: 4.0,
            reduction_voltage_v: 54.8,
            reduction_electrodes: vec![9, 10],
            reduction_depth_ev: 0.45,
        }
    }
}

impl AxialTargets {
    pub fn trapping_voltages(&self) -> SegmentVoltages {
        let pairs: Vec<_> = self
            .trapping_electrodes
            .iter()
            .map(|&i| (i, self.trapping_voltage_v))
            .collect();
        SegmentVoltages::from_pairs(&pairs)
    }

    pub fn reduction_voltages(&self, peak: f64) -> SegmentVoltages {
        let pairs: Vec<_> = self.reduction_electrodes.iter().map(|&i| (i, peak)).collect();
        self.trapping_voltages()
            .plus(&SegmentVoltages::from_pairs(&pairs))
    }
}

/// Fit the experimental-zone (coupling, falloff) to the three targets in a
/// log-residual least-squares sense.
pub fn calibrate_axial(
    geometry: &TrapGeometry,
    targets: &AxialTargets,
    loading_falloff_ratio: f64,
    mass: f64,
    charge: f64,
) -> Result<AxialCalibration, FieldError> {
    let make = |p: &[f64]| AxialCalibration {
        experimental: ZoneCoupling {
            coupling: p[0],
            falloff_m: p[1].exp(),
        },
        loading_falloff_ratio,
    };
    // the fit only needs the region around the experimental zone
    let samples: Vec<f64> = (0..=12_000).map(|i| -6e-3 + i as f64 * 1e-6).collect();
    let v_trap = targets.trapping_voltages();
    let v_red = targets.reduction_voltages(targets.reduction_voltage_v);
    let omega_t = 2.0 * std::f64::consts::PI * targets.omega_ax_hz;
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        if !(p[0] > 0.0) {
            return None;
        }
        let model = AxialPotentialModel::new(geometry, &make(p));
        let a = axial_potential_profile(&model, &v_trap, &samples, mass, charge);
        let b = axial_potential_profile(&model, &v_red, &samples, mass, charge);
        let (a, b) = (a.well()?, b.well()?);
        Some(vec![
            (a.omega_ax / omega_t).ln(),
            (a.depth_ev / targets.trapping_depth_ev).ln(),
            (b.depth_ev / targets.reduction_depth_ev).ln(),
        ])
    };
    let report = levenberg_marquardt(residuals, &[0.4, (0.5e-3f64).ln()], 200, 1e-10);
    if !report.cost.is_finite() {
        return Err(FieldError::Calibration(
            "no bound configuration near the starting point".into(),
        ));
    }
    if !report.converged {
        return Err(FieldError::Calibration(format!(
            "least squares did not converge after {} iterations (cost trace {:?})",
            report.iterations, report.trace
        )));
    }
    Ok(make(&report.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::ca40_mass;
    use crate::geometry::{build_trap_geometry, TrapLayoutConfig};

    fn model() -> AxialPotentialModel {
        let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
        AxialPotentialModel::new(&g, &AxialCalibration::default())
    }

    #[test]
    fn basis_is_bounded_symmetric_and_peaked() {
        let m = model();
        for b in &m.basis {
            let peak = b.value(b.center);
            for k in 1..200 {
                let dz = k as f64 * 0.05e-3;
                let (l, r) = (b.value(b.center - dz), b.value(b.center + dz));
                assert!((l - r).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&l));
                assert!(l <= peak);
                assert!(b.value(b.center + dz + 0.05e-3) <= r + 1e-15);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = model();
        let v = SegmentVoltages::from_pairs(&[(7, 35.0), (13, 35.0), (9, 20.0)]);
        let h = 1e-7;
        for z in [-1.3e-3, 0.0, 0.37e-3, 2.2e-3] {
            let d = m.derivatives(&v, z);
            let dp = m.derivatives(&v, z + h);
            let dm = m.derivatives(&v, z - h);
            for k in 0..3 {
                let fd = (dp[k] - dm[k]) / (2.0 * h);
                assert!((fd - d[k + 1]).abs() < 1e-5 * d[k + 1].abs().max(1.0), "order {k}");
            }
        }
    }

    #[test]
    fn zero_voltages_are_unbound() {
        let m = model();
        let s = default_profile_samples(&m);
        assert_eq!(
            axial_potential_profile(&m, &SegmentVoltages::default(), &s, ca40_mass(), ELEMENTARY_CHARGE),
            AxialProfile::Unbound
        );
    }

    #[test]
    fn trapping_configuration_is_centered() {
        let m = model();
        let s = default_profile_samples(&m);
        let p = axial_potential_profile(
            &m,
            &AxialTargets::default().trapping_voltages(),
            &s,
            ca40_mass(),
            ELEMENTARY_CHARGE,
        );
        let w = p.well().unwrap();
        assert!(w.well_z.abs() < 1e-9);
        assert!((w.left_barrier_z + w.right_barrier_z).abs() < 1e-6);
    }

    #[test]
    fn negative_charge_sees_inverted_well() {
        let m = model();
        let s = default_profile_samples(&m);
        let v = AxialTargets::default().trapping_voltages().scaled(-1.0);
        let pos = axial_potential_profile(&m, &v, &s, ca40_mass(), ELEMENTARY_CHARGE);
        let neg = axial_potential_profile(
            &m,
            &AxialTargets::default().trapping_voltages(),
            &s,
            ca40_mass(),
            -ELEMENTARY_CHARGE,
        );
        let (a, b) = (pos.well().unwrap(), neg.well().unwrap());
        assert!((a.depth_ev - b.depth_ev).abs() < 1e-9);
    }
}
