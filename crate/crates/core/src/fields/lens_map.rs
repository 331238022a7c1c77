//! Fast lens field for ray tracing: the on-axis potential of a BEM solution
//! and its derivatives are tabulated, and off-axis fields follow from the
//! paraxial series of an axisymmetric harmonic potential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bem::{panel_quadrature, ChargeSolution};
use super::FieldError;
use crate::constants::COULOMB_CONSTANT;

const ORDERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensMapOptions {
    pub z_min_m: f64,
    pub z_max_m: f64,
    pub dz_m: f64,
    /// Radius beyond which a ray counts as lost on the electrodes.
    pub r_max_m: f64,
}

impl Default for LensMapOptions {
    fn default() -> Self {
        Self {
            z_min_m: -0.08,
            z_max_m: 0.08,
            dz_m: 10e-6,
            r_max_m: 1.9e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensFieldMap {
    pub options: LensMapOptions,
    /// Voltage on the driven terminal the table was built for.
    pub reference_voltage: f64,
    n: usize,
    table: Vec<[f64; ORDERS]>,
}

/// n-th z-derivative of 1/sqrt(R^2 + dz^2) for n = 0..ORDERS, via
/// d^n/dz^n (1/rho) = (-1)^n n! P_n(dz/rho) / rho^(n+1).
fn inverse_distance_derivatives(radius: f64, dz: f64) -> [f64; ORDERS] {
    let rho = radius.hypot(dz);
    let u = dz / rho;
    let mut legendre = [0.0; ORDERS];
    legendre[0] = 1.0;
    legendre[1] = u;
    for n in 1..ORDERS - 1 {
        legendre[n + 1] =
            ((2 * n + 1) as f64 * u * legendre[n] - n as f64 * legendre[n - 1]) / (n + 1) as f64;
    }
    let mut out = [0.0; ORDERS];
    let mut fact = 1.0;
    let mut rho_pow = rho;
    for n in 0..ORDERS {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        out[n] = sign * fact * legendre[n] / rho_pow;
        fact *= (n + 1) as f64;
        rho_pow *= rho;
    }
    out
}

impl LensFieldMap {
    /// Tabulate the axis of `solution`, normalised per volt of `reference_voltage`.
    pub fn build(
        solution: &ChargeSolution,
        reference_voltage: f64,
        options: LensMapOptions,
    ) -> Result<Self, FieldError> {
        if !(options.dz_m > 0.0 && options.z_max_m > options.z_min_m && options.r_max_m > 0.0) {
            return Err(FieldError::Invalid(format!("lens map options {options:?}")));
        }
        if reference_voltage == 0.0 {
            return Err(FieldError::Invalid("reference voltage must be non-zero".into()));
        }
        let n = ((options.z_max_m - options.z_min_m) / options.dz_m).round() as usize + 1;
        let dz = (options.z_max_m - options.z_min_m) / (n - 1) as f64;
        let scale = COULOMB_CONSTANT / reference_voltage;
        let table = (0..n)
            .into_par_iter()
            .map(|i| {
                let z = options.z_min_m + i as f64 * dz;
                let mut acc = [0.0; ORDERS];
                for p in &solution.panels {
                    let sigma = p.density;
                    panel_quadrature(&p.panel, 0.0, z, |rs, zs, w| {
                        let d = inverse_distance_derivatives(rs, z - zs);
                        for k in 0..ORDERS {
                            acc[k] += w * sigma * d[k];
                        }
                    });
                }
                acc.map(|a| a * scale)
            })
            .collect();
        let options = LensMapOptions { dz_m: dz, ..options };
        Ok(Self {
            options,
            reference_voltage,
            n,
            table,
        })
    }

    /// On-axis potential derivatives phi^(k), k = 0..7, per volt.
    pub fn axis(&self, z: f64) -> [f64; ORDERS] {
        let o = &self.options;
        if z <= o.z_min_m || z >= o.z_max_m {
            return [0.0; ORDERS];
        }
        let s = (z - o.z_min_m) / o.dz_m;
        let i = (s.floor() as usize).min(self.n - 2);
        let t = s - i as f64;
        let (a, b) = (&self.table[i], &self.table[i + 1]);
        let h = o.dz_m;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        let mut out = [0.0; ORDERS];
        for k in 0..ORDERS - 1 {
            out[k] = h00 * a[k] + h10 * h * a[k + 1] + h01 * b[k] + h11 * h * b[k + 1];
        }
        out[ORDERS - 1] = (1.0 - t) * a[ORDERS - 1] + t * b[ORDERS - 1];
        out
    }

    /// Potential and (E_r, E_z) at (r, z) for `volts` on the driven terminal.
    /// `None` when the point lies beyond the clear radius.
    pub fn eval(&self, r: f64, z: f64, volts: f64) -> Option<(f64, f64, f64)> {
        if r > self.options.r_max_m {
            return None;
        }
        let d = self.axis(z);
        let r2 = r * r;
        let phi = d[0] - r2 / 4.0 * d[2] + r2 * r2 / 64.0 * d[4] - r2 * r2 * r2 / 2304.0 * d[6];
        let ez = -d[1] + r2 / 4.0 * d[3] - r2 * r2 / 64.0 * d[5] + r2 * r2 * r2 / 2304.0 * d[7];
        let er = r * (d[2] / 2.0 - r2 / 16.0 * d[4] + r2 * r2 / 384.0 * d[6]);
        Some((volts * phi, volts * er, volts * ez))
    }

    /// Cartesian field (E_x, E_y, E_z) for lens-local coordinates.
    pub fn field_xyz(&self, x: f64, y: f64, z: f64, volts: f64) -> Option<[f64; 3]> {
        let r = x.hypot(y);
        let (_, er, ez) = self.eval(r, z, volts)?;
        if r == 0.0 {
            return Some([0.0, 0.0, ez]);
        }
        Some([er * x / r, er * y / r, ez])
    }
}
