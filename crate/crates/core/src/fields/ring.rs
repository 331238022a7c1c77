//! Potential and field of a uniformly charged circular ring (filament).

use super::elliptic::ellipke_complement;
use crate::constants::COULOMB_CONSTANT;
use std::f64::consts::FRAC_2_PI;

/// Below this ratio of r to the source distance the radial field switches
/// to its paraxial expansion; the elliptic form cancels catastrophically.
const PARAXIAL_RATIO: f64 = 1e-4;

/// Potential at (r, z) from a ring of radius `ring_r` at `ring_z` per coulomb of ring charge.
pub fn ring_potential(ring_r: f64, ring_z: f64, r: f64, z: f64) -> f64 {
    let dz = z - ring_z;
    if r == 0.0 || ring_r == 0.0 {
        let rr = if r == 0.0 { ring_r } else { r };
        return COULOMB_CONSTANT / (rr * rr + dz * dz).sqrt();
    }
    let a2 = (r + ring_r).powi(2) + dz * dz;
    let b2 = (r - ring_r).powi(2) + dz * dz;
    let (k, _) = ellipke_complement(b2 / a2);
    COULOMB_CONSTANT * FRAC_2_PI * k / a2.sqrt()
}

/// (E_r, E_z) at (r, z) from a ring per coulomb of ring charge.
pub fn ring_field(ring_r: f64, ring_z: f64, r: f64, z: f64) -> (f64, f64) {
    let dz = z - ring_z;
    if ring_r == 0.0 {
        // point charge on the axis
        let d2 = r * r + dz * dz;
        let f = COULOMB_CONSTANT / (d2 * d2.sqrt());
        return (f * r, f * dz);
    }
    let rho2 = ring_r * ring_r + dz * dz;
    if r <= PARAXIAL_RATIO * rho2.sqrt() {
        let rho = rho2.sqrt();
        let rho3 = rho2 * rho;
        let ez = COULOMB_CONSTANT * dz / rho3;
        // E_r = (r / 2) d^2 phi_axis / dz^2
        let er = 0.5 * r * COULOMB_CONSTANT * (2.0 * dz * dz - ring_r * ring_r) / (rho3 * rho2);
        return (er, ez);
    }
    let a2 = (r + ring_r).powi(2) + dz * dz;
    let b2 = (r - ring_r).powi(2) + dz * dz;
    let (k, e) = ellipke_complement(b2 / a2);
    let a = a2.sqrt();
    let ez = COULOMB_CONSTANT * FRAC_2_PI * dz * e / (a * b2);
    let er = COULOMB_CONSTANT * FRAC_2_PI / (2.0 * r * a)
        * (k - (ring_r * ring_r - r * r + dz * dz) / b2 * e);
    (er, ez)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_axis_closed_form() {
        let (rr, zz) = (2e-3, 0.5e-3);
        for dz in [0.0, 1e-4, 3e-3, 0.1] {
            let v = ring_potential(rr, zz, 0.0, zz + dz);
            let exact = COULOMB_CONSTANT / (rr * rr + dz * dz).sqrt();
            assert!((v - exact).abs() < 1e-14 * exact);
            // tiny r through the elliptic branch
            let v2 = ring_potential(rr, zz, 1e-12, zz + dz);
            assert!((v2 - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn field_is_negative_gradient() {
        let (rr, zz) = (1.0, 0.0);
        for &(r, z) in &[(0.7, 0.3), (1.5, -0.4), (0.2, 2.0), (3.0, 0.01), (1e-5, 0.4)] {
            let h = 1e-6;
            let er_fd = -(ring_potential(rr, zz, r + h, z) - ring_potential(rr, zz, r - h, z)) / (2.0 * h);
            let ez_fd = -(ring_potential(rr, zz, r, z + h) - ring_potential(rr, zz, r, z - h)) / (2.0 * h);
            let (er, ez) = ring_field(rr, zz, r, z);
            let scale = er.abs().max(ez.abs());
            assert!((er - er_fd).abs() < 1e-6 * scale, "Er at ({r},{z}): {er} vs {er_fd}");
            assert!((ez - ez_fd).abs() < 1e-6 * scale, "Ez at ({r},{z}): {ez} vs {ez_fd}");
        }
    }

    #[test]
    fn axial_field_vanishes_in_ring_plane() {
        let (_, ez) = ring_field(1e-3, 0.2, 0.0, 0.2);
        assert_eq!(ez, 0.0);
    }

    #[test]
    fn kernel_is_reciprocal() {
        let pts = [(1.0, 0.0), (0.5, 0.3), (2.0, -1.0), (0.1, 0.7)];
        for &(r1, z1) in &pts {
            for &(r2, z2) in &pts {
                if (r1, z1) == (r2, z2) {
                    continue;
                }
                let a = ring_potential(r1, z1, r2, z2);
                let b = ring_potential(r2, z2, r1, z1);
                assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }
}
