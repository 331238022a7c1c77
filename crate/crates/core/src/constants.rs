//! Physical constants (CODATA 2018) and species defaults.

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// 1 / (4 pi epsilon_0) in V m / C.
pub const COULOMB_CONSTANT: f64 = 1.0 / (4.0 * std::f64::consts::PI * EPSILON_0);

/// Mass of a singly charged calcium-40 ion, in atomic mass units.
pub const CA40_ION_MASS_U: f64 = 39.9626;

/// Mass of a singly charged calcium-40 ion in kg.
pub fn ca40_mass() -> f64 {
    CA40_ION_MASS_U * ATOMIC_MASS_UNIT
}

pub fn ev_to_joule(ev: f64) -> f64 {
    ev * ELEMENTARY_CHARGE
}

pub fn joule_to_ev(j: f64) -> f64 {
    j / ELEMENTARY_CHARGE
}

pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

pub fn angular_to_hz(w: f64) -> f64 {
    w / (2.0 * std::f64::consts::PI)
}
