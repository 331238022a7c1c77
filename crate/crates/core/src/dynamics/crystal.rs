//! Equilibrium positions of small Coulomb crystals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{DynamicsError, Vec3};
use crate::constants::COULOMB_CONSTANT;
use crate::fields::{
    axial_potential_profile, default_profile_samples, AxialPotentialModel, SegmentVoltages,
};

/// Axial confinement used for crystal equilibria.
#[derive(Debug, Clone, Copy)]
pub enum AxialWell<'a> {
    Harmonic { omega_ax: f64, center_z: f64 },
    Model {
        model: &'a AxialPotentialModel,
        voltages: &'a SegmentVoltages,
    },
}

impl AxialWell<'_> {
    /// Potential energy of one ion and its first two z-derivatives, plus the
    /// third derivative of the electrostatic potential (for the radial dc term).
    fn axial(&self, z: f64, mass: f64, charge: f64) -> [f64; 4] {
        match *self {
            AxialWell::Harmonic { omega_ax, center_z } => {
                let k = mass * omega_ax * omega_ax;
                let d = z - center_z;
                [0.5 * k * d * d, k * d, k, 0.0]
            }
            AxialWell::Model { model, voltages } => {
                let d = model.derivatives(voltages, z);
                [charge * d[0], charge * d[1], charge * d[2], charge * d[3]]
            }
        }
    }

    fn minimum(&self, mass: f64, charge: f64) -> Result<(f64, f64), DynamicsError> {
        match *self {
            AxialWell::Harmonic { omega_ax, center_z } => {
                if omega_ax > 0.0 {
                    Ok((center_z, omega_ax))
                } else {
                    Err(DynamicsError::Unbound("axial frequency must be positive".into()))
                }
            }
            AxialWell::Model { model, voltages } => {
                let s = default_profile_samples(model);
                match axial_potential_profile(model, voltages, &s, mass, charge).well() {
                    Some(w) => Ok((w.well_z, w.omega_ax)),
                    None => Err(DynamicsError::Unbound("no axial minimum".into())),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalOptions {
    /// Convergence when |grad U| < tolerance * (Coulomb force at the length scale).
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CrystalOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

/// Analytic spacing of two ions in a harmonic axial well.
pub fn two_ion_spacing(omega_ax: f64, mass: f64, charge: f64) -> f64 {
    (2.0 * COULOMB_CONSTANT * charge * charge / (mass * omega_ax * omega_ax)).cbrt()
}

struct Energy<'a> {
    well: AxialWell<'a>,
    /// Pseudopotential radial frequencies (x, y).
    omega_rad: (f64, f64),
    mass: f64,
    charge: f64,
}

impl Energy<'_> {
    fn value(&self, p: &[Vec3]) -> f64 {
        let (wx, wy) = self.omega_rad;
        let mut u = 0.0;
        for r in p {
            let a = self.well.axial(r.z, self.mass, self.charge);
            let rho2 = r.x * r.x + r.y * r.y;
            u += a[0] + 0.5 * self.mass * (wx * wx * r.x * r.x + wy * wy * r.y * r.y) - 0.25 * a[2] * rho2;
        }
        let kq2 = COULOMB_CONSTANT * self.charge * self.charge;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                u += kq2 / (p[i] - p[j]).norm();
            }
        }
        u
    }

    fn gradient_hessian(&self, p: &[Vec3]) -> (DVector<f64>, DMatrix<f64>) {
        let n = p.len();
        let (wx, wy) = self.omega_rad;
        let mut g = DVector::zeros(3 * n);
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        for (i, r) in p.iter().enumerate() {
            let a = self.well.axial(r.z, self.mass, self.charge);
            let rho2 = r.x * r.x + r.y * r.y;
            let kx = self.mass * wx * wx - 0.5 * a[2];
            let ky = self.mass * wy * wy - 0.5 * a[2];
            g[3 * i] += kx * r.x;
            g[3 * i + 1] += ky * r.y;
            g[3 * i + 2] += a[1] - 0.25 * a[3] * rho2;
            h[(3 * i, 3 * i)] += kx;
            h[(3 * i + 1, 3 * i + 1)] += ky;
            h[(3 * i + 2, 3 * i + 2)] += a[2];
            h[(3 * i, 3 * i + 2)] -= 0.5 * a[3] * r.x;
            h[(3 * i + 2, 3 * i)] -= 0.5 * a[3] * r.x;
            h[(3 * i + 1, 3 * i + 2)] -= 0.5 * a[3] * r.y;
            h[(3 * i + 2, 3 * i + 1)] -= 0.5 * a[3] * r.y;
        }
        let kq2 = COULOMB_CONSTANT * self.charge * self.charge;
        for i in 0..n {
            for j in i + 1..n {
                let d = p[i] - p[j];
                let s = d.norm();
                let s3 = s * s * s;
                let f = -kq2 / s3 * d;
                for c in 0..3 {
                    g[3 * i + c] += f[c];
                    g[3 * j + c] -= f[c];
                }
                let block = kq2 * (3.0 * d * d.transpose() / (s3 * s * s) - nalgebra::Matrix3::identity() / s3);
                for a in 0..3 {
                    for b in 0..3 {
                        let v = block[(a, b)];
                        h[(3 * i + a, 3 * i + b)] += v;
                        h[(3 * j + a, 3 * j + b)] += v;
                        h[(3 * i + a, 3 * j + b)] -= v;
                        h[(3 * j + a, 3 * i + b)] -= v;
                    }
                }
            }
        }
        (g, h)
    }
}

fn to_points(x: &DVector<f64>) -> Vec<Vec3> {
    (0..x.len() / 3)
        .map(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
        .collect()
}

/// Minimum-energy positions of `n_ions` identical ions, ordered along z.
/// `omega_rad` are pseudopotential frequencies; the dc defocusing implied by
/// the axial curvature is added internally.
pub fn equilibrium_crystal(
    n_ions: usize,
    well: AxialWell,
    omega_rad: (f64, f64),
    mass: f64,
    charge: f64,
    options: &CrystalOptions,
) -> Result<Vec<Vec3>, DynamicsError> {
    if n_ions == 0 {
        return Err(DynamicsError::Invalid("at least one ion is required".into()));
    }
    let (z0, omega_ax) = well.minimum(mass, charge)?;
    let energy = Energy {
        well,
        omega_rad,
        mass,
        charge,
    };
    let length = two_ion_spacing(omega_ax, mass, charge);
    let force_scale = COULOMB_CONSTANT * charge * charge / (length * length);
    let mut x = DVector::zeros(3 * n_ions);
    for i in 0..n_ions {
        x[3 * i + 2] = z0 + length * (i as f64 - 0.5 * (n_ions - 1) as f64);
    }
    let mut gnorm = f64::INFINITY;
    for _ in 0..options.max_iterations {
        let p = to_points(&x);
        let (g, h) = energy.gradient_hessian(&p);
        gnorm = g.norm();
        let eig = SymmetricEigen::new(h.clone());
        let (imin, lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
        // a cylindrically symmetric well leaves a zero mode (rotation about z)
        let zero_mode = 1e-9 * eig.eigenvalues.amax();
        if gnorm < options.gradient_tolerance * force_scale && lmin > -zero_mode {
            let mut pts = to_points(&x);
            pts.sort_by(|a, b| a.z.total_cmp(&b.z));
            return Ok(pts);
        }
        let step = if lmin > -zero_mode {
            // Newton step, projected off the zero modes
            let mut s = DVector::zeros(3 * n_ions);
            for (k, &l) in eig.eigenvalues.iter().enumerate() {
                if l > zero_mode {
                    let v = eig.eigenvectors.column(k);
                    s -= v * (v.dot(&g) / l);
                }
            }
            s
        } else if gnorm < 1e-6 * force_scale {
            // saddle (e.g. linear chain past the zigzag transition): leave along the unstable mode
            eig.eigenvectors.column(imin) * (0.1 * length)
        } else {
            // shift the spectrum to make the step a descent direction
            let shift = -lmin + 1e-3 * eig.eigenvalues.amax().max(1e-300);
            let hs = &h + DMatrix::identity(3 * n_ions, 3 * n_ions) * shift;
            -hs.lu().solve(&g).unwrap_or_else(|| -&g)
        };
        // backtracking on the energy, with the step capped to the length scale
        let cap = (0.5 * length / step.amax().max(1e-300)).min(1.0);
        let mut alpha = cap;
        let e0 = energy.value(&to_points(&x));
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x + &step * alpha;
            let tp = to_points(&trial);
            // near the minimum energy differences drop below rounding; the gradient still resolves them
            if energy.value(&tp) <= e0 + 1e-15 * e0.abs()
                || (lmin > -zero_mode && energy.gradient_hessian(&tp).0.norm() < gnorm)
            {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            x += &step * alpha;
        }
    }
    Err(DynamicsError::NotConverged { gradient: gnorm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ca40_mass, ELEMENTARY_CHARGE};
    use crate::fields::{AxialCalibration, AxialTargets};
    use crate::geometry::{build_trap_geometry, TrapLayoutConfig};
    use std::f64::consts::PI;

    const W_AX: f64 = 2.0 * PI * 280e3;
    const W_RAD: f64 = 2.0 * PI * 1.5e6;

    fn harmonic() -> AxialWell<'static> {
        AxialWell::Harmonic {
            omega_ax: W_AX,
            center_z: 0.0,
        }
    }

    /// Gradient-free pattern search over axial coordinates only.
    fn brute_force_chain(n: usize) -> Vec<f64> {
        let m = ca40_mass();
        let q = ELEMENTARY_CHARGE;
        let energy = |z: &[f64]| {
            let mut u: f64 = z.iter().map(|z| 0.5 * m * W_AX * W_AX * z * z).sum();
            for i in 0..n {
                for j in i + 1..n {
                    u += COULOMB_CONSTANT * q * q / (z[i] - z[j]).abs();
                }
            }
            u
        };
        let mut z: Vec<f64> = (0..n).map(|i| (i as f64 - 0.5 * (n - 1) as f64) * 10e-6).collect();
        let mut step = 1e-6;
        let mut best = energy(&z);
        while step > 1e-15 {
            let mut improved = false;
            for i in 0..n {
                for dir in [-1.0, 1.0] {
                    let mut t = z.clone();
                    t[i] += dir * step;
                    let e = energy(&t);
                    if e < best {
                        best = e;
                        z = t;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        z
    }

    #[test]
    fn single_ion_sits_at_minimum() {
        let p = equilibrium_crystal(1, harmonic(), (W_RAD, W_RAD), ca40_mass(), ELEMENTARY_CHARGE, &CrystalOptions::default()).unwrap();
        assert!(p[0].norm() < 1e-15);
    }

    #[test]
    fn two_ion_spacing_matches_analytic_and_brute_force() {
        let m = ca40_mass();
        let p = equilibrium_crystal(2, harmonic(), (W_RAD, W_RAD), m, ELEMENTARY_CHARGE, &CrystalOptions::default()).unwrap();
        let d = p[1].z - p[0].z;
        let analytic = two_ion_spacing(W_AX, m, ELEMENTARY_CHARGE);
        assert!((analytic - 13.1e-6).abs() < 0.2e-6);
        assert!((d / analytic - 1.0).abs() < 1e-9);
        let bf = brute_force_chain(2);
        assert!(((bf[1] - bf[0]) / d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn four_ions_are_mirror_symmetric() {
        let m = ca40_mass();
        let p = equilibrium_crystal(4, harmonic(), (W_RAD, W_RAD), m, ELEMENTARY_CHARGE, &CrystalOptions::default()).unwrap();
        let z: Vec<f64> = p.iter().map(|r| r.z).collect();
        assert!((z[0] + z[3]).abs() < 1e-12 && (z[1] + z[2]).abs() < 1e-12);
        let ratio = (z[1] - z[0]) / (z[2] - z[1]);
        let bf = brute_force_chain(4);
        let ratio_bf = (bf[1] - bf[0]) / (bf[2] - bf[1]);
        assert!((ratio - ratio_bf).abs() < 1e-5, "{ratio} vs {ratio_bf}");
    }

    #[test]
    fn weak_radial_confinement_gives_zigzag() {
        let m = ca40_mass();
        // effective radial frequency sqrt(1 - 1/2) * W_AX in x, below the 3-ion threshold
        let p = equilibrium_crystal(3, harmonic(), (W_AX, 3.0 * W_AX), m, ELEMENTARY_CHARGE, &CrystalOptions::default()).unwrap();
        assert!(p.iter().any(|r| r.x.abs() > 1e-7));
    }

    #[test]
    fn model_well_and_unbound_error() {
        let g = build_trap_geometry(&TrapLayoutConfig::default()).unwrap();
        let model = AxialPotentialModel::new(&g, &AxialCalibration::default());
        let v = AxialTargets::default().trapping_voltages();
        let well = AxialWell::Model { model: &model, voltages: &v };
        let p = equilibrium_crystal(2, well, (W_RAD, W_RAD), ca40_mass(), ELEMENTARY_CHARGE, &CrystalOptions::default()).unwrap();
        assert!((p[0].z + p[1].z).abs() < 1e-12);
        let zero = SegmentVoltages::default();
        let flat = AxialWell::Model { model: &model, voltages: &zero };
        assert!(matches!(
            equilibrium_crystal(1, flat, (W_RAD, W_RAD), ca40_mass(), ELEMENTARY_CHARGE, &CrystalOptions::default()),
            Err(DynamicsError::Unbound(_))
        ));
    }
}
