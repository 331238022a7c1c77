//! Crystal reduction: the barrier electrodes are ramped up, held and ramped
//! down while the laser-cooled ions move in the secular (pseudopotential)
//! approximation. Ions that pass an escape barrier are removed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::constants::COULOMB_CONSTANT;
use crate::dynamics::{
    equilibrium_crystal, AxialWell, BaoabLangevin, CrystalOptions, IonState, LangevinForces,
    ThermalSource, Vec3,
};
use crate::fields::{
    axial_potential_profile, default_profile_samples, AxialPotentialModel, SegmentVoltages,
};
use crate::seeds::sub_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampConfig {
    pub peak_voltage_v: f64,
    pub rise_time_s: f64,
    pub hold_time_s: f64,
    pub fall_time_s: f64,
    pub ramp_electrodes: Vec<usize>,
    /// Integration steps per period of the fastest secular mode.
    pub steps_per_period: u32,
    /// Voltage levels tabulated for the barrier positions.
    pub barrier_table_levels: usize,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            peak_voltage_v: 54.8,
            rise_time_s: 50e-3,
            hold_time_s: 200e-3,
            fall_time_s: 50e-3,
            ramp_electrodes: vec![9, 10],
            steps_per_period: 10,
            barrier_table_levels: 101,
        }
    }
}

impl RampConfig {
    pub fn duration(&self) -> f64 {
        self.rise_time_s + self.hold_time_s + self.fall_time_s
    }

    /// Ramp electrode voltage at time t.
    pub fn level(&self, t: f64) -> f64 {
        let p = self.peak_voltage_v;
        if t <= 0.0 {
            0.0
        } else if t < self.rise_time_s {
            p * t / self.rise_time_s
        } else if t <= self.rise_time_s + self.hold_time_s {
            p
        } else if t < self.duration() {
            p * (self.duration() - t) / self.fall_time_s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct BarrierRow {
    level: f64,
    left: f64,
    right: f64,
}

/// phi' and phi'' of a fixed voltage set on a uniform grid, interpolated by
/// cubic Hermite polynomials with the next derivative as slope.
#[derive(Debug, Clone)]
struct DerivativeTable {
    z0: f64,
    dz: f64,
    rows: Vec<[f64; 3]>,
}

impl DerivativeTable {
    fn new(model: &AxialPotentialModel, voltages: &SegmentVoltages, (lo, hi): (f64, f64), dz: f64) -> Self {
        let n = ((hi - lo) / dz).ceil() as usize + 1;
        let rows = (0..n)
            .map(|i| {
                let d = model.derivatives(voltages, lo + i as f64 * dz);
                [d[1], d[2], d[3]]
            })
            .collect();
        Self { z0: lo, dz, rows }
    }

    fn eval(&self, z: f64) -> Option<[f64; 2]> {
        let s = (z - self.z0) / self.dz;
        if !(s >= 0.0) || s >= (self.rows.len() - 1) as f64 {
            return None;
        }
        let i = s as usize;
        let t = s - i as f64;
        let (a, b) = (self.rows[i], self.rows[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let f = |k: usize| h00 * a[k] + h10 * self.dz * a[k + 1] + h01 * b[k] + h11 * self.dz * b[k + 1];
        Some([f(0), f(1)])
    }
}

/// Secular-regime trap for the reduction protocol.
#[derive(Debug, Clone)]
pub struct ReductionTrap {
    model: AxialPotentialModel,
    trapping: SegmentVoltages,
    ramp_basis: SegmentVoltages,
    omega_pseudo: f64,
    mass: f64,
    charge: f64,
    trapping_table: DerivativeTable,
    ramp_table: DerivativeTable,
}

impl ReductionTrap {
    pub fn new(
        model: AxialPotentialModel,
        trapping: SegmentVoltages,
        ramp_electrodes: &[usize],
        omega_pseudo: f64,
        mass: f64,
        charge: f64,
    ) -> Result<Self, ProtocolError> {
        if ramp_electrodes.iter().any(|&i| !(1..=model.basis.len()).contains(&i)) {
            return Err(ProtocolError::Invalid(format!("ramp electrodes {ramp_electrodes:?}")));
        }
        let ramp_basis = SegmentVoltages::from_pairs(&ramp_electrodes.iter().map(|&i| (i, 1.0)).collect::<Vec<_>>());
        let extent = model.extent();
        let dz = 2e-6;
        Ok(Self {
            trapping_table: DerivativeTable::new(&model, &trapping, extent, dz),
            ramp_table: DerivativeTable::new(&model, &ramp_basis, extent, dz),
            model,
            trapping,
            ramp_basis,
            omega_pseudo,
            mass,
            charge,
        })
    }

    pub fn voltages(&self, level: f64) -> SegmentVoltages {
        self.trapping.plus(&self.ramp_basis.scaled(level))
    }

    /// phi' and phi'' at `z` with the ramp electrodes at `level` volts.
    pub fn axial_derivatives(&self, level: f64, z: f64) -> [f64; 2] {
        match (self.trapping_table.eval(z), self.ramp_table.eval(z)) {
            (Some(a), Some(b)) => [a[0] + level * b[0], a[1] + level * b[1]],
            _ => {
                let d = self.model.derivatives(&self.voltages(level), z);
                [d[1], d[2]]
            }
        }
    }
}

struct SecularForces<'a> {
    trap: &'a ReductionTrap,
    ramp: &'a RampConfig,
}

impl LangevinForces for SecularForces<'_> {
    fn accelerations(&self, states: &[IonState], active: &[bool], t: f64, out: &mut [Vec3]) {
        let tr = self.trap;
        let level = self.ramp.level(t);
        let qm = tr.charge / tr.mass;
        let wp2 = tr.omega_pseudo * tr.omega_pseudo;
        for (i, s) in states.iter().enumerate() {
            if !active[i] {
                out[i] = Vec3::zeros();
                continue;
            }
            let p = &s.position;
            let d = tr.axial_derivatives(level, p.z);
            let radial = -wp2 + 0.5 * qm * d[1];
            out[i] = Vec3::new(radial * p.x, radial * p.y, -qm * d[0]);
        }
        let kq = COULOMB_CONSTANT * tr.charge * tr.charge / tr.mass;
        for i in 0..states.len() {
            if !active[i] {
                continue;
            }
            for j in i + 1..states.len() {
                if !active[j] {
                    continue;
                }
                let r = states[i].position - states[j].position;
                let d2 = r.norm_squared();
                let f = kq / (d2 * d2.sqrt()) * r;
                out[i] += f;
                out[j] -= f;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovedIon {
    pub ion: usize,
    pub time_s: f64,
    pub z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionOutcome {
    pub n_initial: usize,
    pub remaining: usize,
    pub removed: Vec<RemovedIon>,
    pub steps: u64,
    pub dt_s: f64,
    pub regime: String,
}

fn barrier_table(trap: &ReductionTrap, ramp: &RampConfig) -> Vec<BarrierRow> {
    let samples = default_profile_samples(&trap.model);
    let n = ramp.barrier_table_levels.max(2);
    (0..n)
        .map(|k| {
            let level = ramp.peak_voltage_v * k as f64 / (n - 1) as f64;
            let v = trap.voltages(level);
            match axial_potential_profile(&trap.model, &v, &samples, trap.mass, trap.charge).well() {
                Some(w) if w.depth_ev > 0.0 => BarrierRow {
                    level,
                    left: w.left_barrier_z,
                    right: w.right_barrier_z,
                },
                // no well left: any position counts as escaped
                _ => BarrierRow { level, left: f64::INFINITY, right: f64::NEG_INFINITY },
            }
        })
        .collect()
}

fn barriers_at(table: &[BarrierRow], level: f64) -> (f64, f64) {
    let n = table.len();
    let top = table[n - 1].level;
    if top == 0.0 {
        return (table[0].left, table[0].right);
    }
    let s = (level / top * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let f = s - i as f64;
    let (a, b) = (table[i], table[i + 1]);
    let lerp = |x: f64, y: f64| {
        if x.is_finite() && y.is_finite() {
            x + f * (y - x)
        } else if f < 0.5 {
            x
        } else {
            y
        }
    };
    (lerp(a.left, b.left), lerp(a.right, b.right))
}

/// Highest secular angular frequency met during the ramp (axial or radial).
fn fastest_frequency(trap: &ReductionTrap, table: &[BarrierRow]) -> f64 {
    let samples = default_profile_samples(&trap.model);
    let mut w_max = trap.omega_pseudo;
    for row in table.iter().step_by(10).chain(table.last()) {
        let v = trap.voltages(row.level);
        if let Some(w) = axial_potential_profile(&trap.model, &v, &samples, trap.mass, trap.charge).well() {
            w_max = w_max.max(w.omega_ax);
        }
    }
    w_max
}

/// Ramp schedule with its barrier table and time step, shared by all trials.
#[derive(Debug, Clone)]
pub struct PreparedRamp<'a> {
    trap: &'a ReductionTrap,
    ramp: RampConfig,
    table: Vec<BarrierRow>,
    dt: f64,
}

impl<'a> PreparedRamp<'a> {
    pub fn new(trap: &'a ReductionTrap, ramp: &RampConfig) -> Result<Self, ProtocolError> {
        if !(ramp.rise_time_s >= 0.0 && ramp.hold_time_s >= 0.0 && ramp.fall_time_s >= 0.0) {
            return Err(ProtocolError::Invalid("ramp times must be non-negative".into()));
        }
        let table = barrier_table(trap, ramp);
        let w_max = fastest_frequency(trap, &table);
        let dt = 2.0 * std::f64::consts::PI / w_max / ramp.steps_per_period.max(4) as f64;
        Ok(Self {
            trap,
            ramp: ramp.clone(),
            table,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Escape positions (left, right) at ramp level `level`.
    pub fn barriers(&self, level: f64) -> (f64, f64) {
        barriers_at(&self.table, level)
    }

    /// Start from the equilibrium crystal of `n_ions` with thermal
    /// velocities, run the ramp under Langevin cooling and count the ions left.
    pub fn run(&self, n_ions: usize, source: &ThermalSource, seed: u64) -> Result<ReductionOutcome, ProtocolError> {
        if n_ions == 0 {
            return Err(ProtocolError::Invalid("at least one ion is required".into()));
        }
        let (trap, ramp, dt) = (self.trap, &self.ramp, self.dt);
        let initial = trap.voltages(0.0);
        let positions = equilibrium_crystal(
            n_ions,
            AxialWell::Model { model: &trap.model, voltages: &initial },
            (trap.omega_pseudo, trap.omega_pseudo),
            trap.mass,
            trap.charge,
            &CrystalOptions::default(),
        )?;
        let mut rng = ChaCha12Rng::seed_from_u64(sub_seed(seed, &[0x5ed0, n_ions as u64]));
        let sv = (crate::constants::BOLTZMANN * source.temperature_k.max(0.0) / trap.mass).sqrt();
        let mut states: Vec<IonState> = positions
            .iter()
            .map(|p| {
                let v = Vec3::from_fn(|_, _| sv * rng.sample::<f64, _>(rand_distr::StandardNormal));
                IonState { position: *p, velocity: v, mass: trap.mass, charge: trap.charge }
            })
            .collect();
        let mut active = vec![true; n_ions];
        let forces = SecularForces { trap, ramp };
        let integrator = BaoabLangevin {
            dt,
            damping_rate: source.damping_rate_per_s,
            temperature: source.temperature_k,
        };
        let mut acc = vec![Vec3::zeros(); n_ions];
        forces.accelerations(&states, &active, 0.0, &mut acc);
        let total = (ramp.duration() / dt).ceil() as u64;
        let mut removed = Vec::new();
        let mut t = 0.0;
        for k in 0..total {
            integrator.step(&mut states, &active, &mut acc, t, &forces, &mut rng);
            t = (k + 1) as f64 * dt;
            let (left, right) = self.barriers(ramp.level(t));
            let mut changed = false;
            for i in 0..n_ions {
                let z = states[i].position.z;
                if active[i] && !(z > left && z < right) {
                    active[i] = false;
                    removed.push(RemovedIon { ion: i, time_s: t, z_m: z });
                    changed = true;
                }
            }
            if changed {
                if active.iter().all(|a| !a) {
                    break;
                }
                forces.accelerations(&states, &active, t, &mut acc);
            }
        }
        Ok(ReductionOutcome {
            n_initial: n_ions,
            remaining: active.iter().filter(|a| **a).count(),
            removed,
            steps: total,
            dt_s: dt,
            regime: "secular".into(),
        })
    }
}

/// One reduction trial; see [`PreparedRamp::run`]. Prefer a shared
/// [`PreparedRamp`] when running many trials.
pub fn run_reduction_ramp(
    n_ions: usize,
    ramp: &RampConfig,
    source: &ThermalSource,
    seed: u64,
    trap: &ReductionTrap,
) -> Result<ReductionOutcome, ProtocolError> {
    PreparedRamp::new(trap, ramp)?.run(n_ions, source, seed)
}
