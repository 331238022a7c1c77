//! Velocity Verlet at a fixed step, with an embedded Dormand-Prince 5(4)
//! fallback for velocity-dependent forces or explicitly requested windows.

use serde::{Deserialize, Serialize};

use super::{DynamicsError, IonState, Vec3};

/// Acceleration oracle for a set of ions.
pub trait ForceField: Sync {
    /// Write the acceleration of every ion into `out`.
    fn accelerations(&self, states: &[IonState], t: f64, out: &mut [Vec3]);

    /// True if accelerations depend on velocity (breaks the symplectic split).
    fn velocity_dependent(&self) -> bool {
        false
    }

    /// False once `state` has left the region where the field is defined.
    fn in_domain(&self, _state: &IonState, _t: f64) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepControl {
    Fixed { dt: f64 },
    Adaptive { rtol: f64, atol: f64, dt_initial: f64, dt_min: f64 },
    /// Fixed step unless the field is velocity dependent.
    Auto { dt: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegratorKind {
    VelocityVerlet,
    DormandPrince45,
}

impl IntegratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntegratorKind::VelocityVerlet => "velocity-verlet",
            IntegratorKind::DormandPrince45 => "dormand-prince-45",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorMetadata {
    pub integrator: IntegratorKind,
    pub steps: u64,
    pub rejected_steps: u64,
    pub final_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub ion: usize,
    pub time: f64,
    pub state: IonState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<IonState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOutput {
    /// One trajectory per ion, sampled every `record_every` steps plus the endpoints.
    pub trajectories: Vec<Trajectory>,
    pub final_states: Vec<IonState>,
    pub exits: Vec<ExitRecord>,
    pub metadata: IntegratorMetadata,
}

impl IntegrationOutput {
    pub fn exit_of(&self, ion: usize) -> Option<&ExitRecord> {
        self.exits.iter().find(|e| e.ion == ion)
    }
}

struct Recorder {
    every: usize,
    trajectories: Vec<Trajectory>,
}

impl Recorder {
    fn new(n: usize, every: usize) -> Self {
        Self {
            every,
            trajectories: vec![Trajectory::default(); n],
        }
    }

    fn push(&mut self, step: u64, t: f64, states: &[IonState], active: &[bool], force: bool) {
        if self.every == 0 && !force {
            return;
        }
        if force || step % self.every as u64 == 0 {
            for (i, s) in states.iter().enumerate() {
                if active[i] {
                    let tr = &mut self.trajectories[i];
                    if tr.times.last() != Some(&t) {
                        tr.times.push(t);
                        tr.states.push(*s);
                    }
                }
            }
        }
    }
}

/// Integrate `states` from `t_span.0` to `t_span.1`. Ions leaving the field's
/// domain are frozen and reported in `exits`. `record_every = 0` keeps only
/// the endpoints.
pub fn integrate(
    states: &[IonState],
    field: &dyn ForceField,
    t_span: (f64, f64),
    control: StepControl,
    record_every: usize,
) -> Result<IntegrationOutput, DynamicsError> {
    let (t0, t1) = t_span;
    if !(t1 >= t0) {
        return Err(DynamicsError::Invalid(format!("time span {t0}..{t1}")));
    }
    let kind = match control {
        StepControl::Fixed { .. } => IntegratorKind::VelocityVerlet,
        StepControl::Adaptive { .. } => IntegratorKind::DormandPrince45,
        StepControl::Auto { .. } => {
            if field.velocity_dependent() {
                IntegratorKind::DormandPrince45
            } else {
                IntegratorKind::VelocityVerlet
            }
        }
    };
    match (kind, control) {
        (IntegratorKind::VelocityVerlet, StepControl::Fixed { dt } | StepControl::Auto { dt, .. }) => {
            verlet(states, field, t0, t1, dt, record_every)
        }
        (_, StepControl::Adaptive { rtol, atol, dt_initial, dt_min }) => {
            dopri(states, field, t0, t1, rtol, atol, dt_initial, dt_min, record_every)
        }
        (_, StepControl::Auto { dt, rtol }) => {
            dopri(states, field, t0, t1, rtol, 1e-12 * rtol, dt, dt * 1e-9, record_every)
        }
        _ => unreachable!(),
    }
}

fn verlet(
    initial: &[IonState],
    field: &dyn ForceField,
    t0: f64,
    t1: f64,
    dt: f64,
    record_every: usize,
) -> Result<IntegrationOutput, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::Invalid(format!("time step {dt}")));
    }
    let n = initial.len();
    let mut s = initial.to_vec();
    let mut active = vec![true; n];
    let mut exits = Vec::new();
    let mut acc = vec![Vec3::zeros(); n];
    let mut rec = Recorder::new(n, record_every);
    field.accelerations(&s, t0, &mut acc);
    rec.push(0, t0, &s, &active, true);
    let total = ((t1 - t0) / dt).ceil() as u64;
    let mut t = t0;
    let mut steps = 0;
    for k in 0..total {
        let h = if k + 1 == total { t1 - t } else { dt };
        if h <= 0.0 {
            break;
        }
        for i in 0..n {
            if active[i] {
                s[i].velocity += 0.5 * h * acc[i];
                let v = s[i].velocity;
                s[i].position += h * v;
            }
        }
        t = if k + 1 == total { t1 } else { t0 + (k + 1) as f64 * dt };
        field.accelerations(&s, t, &mut acc);
        for i in 0..n {
            if active[i] {
                s[i].velocity += 0.5 * h * acc[i];
            }
        }
        steps += 1;
        for i in 0..n {
            if active[i] && !field.in_domain(&s[i], t) {
                active[i] = false;
                exits.push(ExitRecord { ion: i, time: t, state: s[i] });
                let tr = &mut rec.trajectories[i];
                tr.times.push(t);
                tr.states.push(s[i]);
            }
        }
        rec.push(steps, t, &s, &active, false);
        if active.iter().all(|a| !a) {
            break;
        }
    }
    rec.push(steps, t, &s, &active, true);
    Ok(IntegrationOutput {
        trajectories: rec.trajectories,
        final_states: s,
        exits,
        metadata: IntegratorMetadata {
            integrator: IntegratorKind::VelocityVerlet,
            steps,
            rejected_steps: 0,
            final_time: t,
        },
    })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[allow(clippy::too_many_arguments)]
fn dopri(
    initial: &[IonState],
    field: &dyn ForceField,
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
    dt_initial: f64,
    dt_min: f64,
    record_every: usize,
) -> Result<IntegrationOutput, DynamicsError> {
    if !(rtol > 0.0 && dt_initial > 0.0) {
        return Err(DynamicsError::Invalid("adaptive step parameters".into()));
    }
    let n = initial.len();
    let mut s = initial.to_vec();
    let mut active = vec![true; n];
    let mut exits = Vec::new();
    let mut rec = Recorder::new(n, record_every);
    rec.push(0, t0, &s, &active, true);
    let mut t = t0;
    let mut h = dt_initial.min(t1 - t0).max(f64::MIN_POSITIVE);
    let (mut steps, mut rejected) = (0u64, 0u64);
    // stage derivatives: (dx/dt, dv/dt) per ion
    let mut kx = vec![vec![Vec3::zeros(); n]; 7];
    let mut kv = vec![vec![Vec3::zeros(); n]; 7];
    let mut stage = s.clone();
    let mut acc = vec![Vec3::zeros(); n];
    while t < t1 && active.iter().any(|&a| a) {
        if t + h > t1 {
            h = t1 - t;
        }
        for st in 0..7 {
            for i in 0..n {
                let mut x = s[i].position;
                let mut v = s[i].velocity;
                for j in 0..st {
                    let a = A[st][j];
                    if a != 0.0 {
                        x += h * a * kx[j][i];
                        v += h * a * kv[j][i];
                    }
                }
                stage[i].position = x;
                stage[i].velocity = v;
            }
            field.accelerations(&stage, t + C[st] * h, &mut acc);
            for i in 0..n {
                kx[st][i] = stage[i].velocity;
                kv[st][i] = if active[i] { acc[i] } else { Vec3::zeros() };
                if !active[i] {
                    kx[st][i] = Vec3::zeros();
                }
            }
        }
        // error norm over active ions, scaled per component
        let mut err2 = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let (mut dx, mut dv) = (Vec3::zeros(), Vec3::zeros());
            for st in 0..7 {
                let d = B5[st] - B4[st];
                dx += h * d * kx[st][i];
                dv += h * d * kv[st][i];
            }
            let (xs, vs) = (stage[i].position, stage[i].velocity);
            let xscale = atol + rtol * s[i].position.abs().sup(&xs.abs()).max().max(
                (s[i].velocity * h).abs().max(),
            );
            let vscale = atol / h.max(f64::MIN_POSITIVE) + rtol * s[i].velocity.abs().sup(&vs.abs()).max();
            for c in 0..3 {
                err2 += (dx[c] / xscale).powi(2) + (dv[c] / vscale).powi(2);
            }
            count += 6;
        }
        let err = (err2 / count.max(1) as f64).sqrt();
        if err <= 1.0 {
            t += h;
            // FSAL: stage 6 equals the accepted 5th-order solution
            for i in 0..n {
                if active[i] {
                    s[i].position = stage[i].position;
                    s[i].velocity = stage[i].velocity;
                }
            }
            steps += 1;
            for i in 0..n {
                if active[i] && !field.in_domain(&s[i], t) {
                    active[i] = false;
                    exits.push(ExitRecord { ion: i, time: t, state: s[i] });
                    let tr = &mut rec.trajectories[i];
                    tr.times.push(t);
                    tr.states.push(s[i]);
                }
            }
            rec.push(steps, t, &s, &active, false);
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else if err.is_finite() {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            0.2
        };
        h *= factor;
        if h < dt_min && t < t1 {
            return Err(DynamicsError::StepUnderflow { t, dt: h });
        }
    }
    rec.push(steps, t, &s, &active, true);
    Ok(IntegrationOutput {
        trajectories: rec.trajectories,
        final_states: s,
        exits,
        metadata: IntegratorMetadata {
            integrator: IntegratorKind::DormandPrince45,
            steps,
            rejected_steps: rejected,
            final_time: t,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Harmonic(f64);
    impl ForceField for Harmonic {
        fn accelerations(&self, s: &[IonState], _: f64, out: &mut [Vec3]) {
            for (o, st) in out.iter_mut().zip(s) {
                *o = -self.0 * self.0 * st.position;
            }
        }
    }

    struct Free;
    impl ForceField for Free {
        fn accelerations(&self, _: &[IonState], _: f64, out: &mut [Vec3]) {
            out.iter_mut().for_each(|o| *o = Vec3::zeros());
        }
        fn in_domain(&self, s: &IonState, _: f64) -> bool {
            s.position.z < 1.0
        }
    }

    struct Damped(f64, f64);
    impl ForceField for Damped {
        fn accelerations(&self, s: &[IonState], _: f64, out: &mut [Vec3]) {
            for (o, st) in out.iter_mut().zip(s) {
                *o = -self.0 * self.0 * st.position - self.1 * st.velocity;
            }
        }
        fn velocity_dependent(&self) -> bool {
            true
        }
    }

    fn upward_crossings(tr: &Trajectory) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 1..tr.times.len() {
            let (a, b) = (tr.states[k - 1].position.x, tr.states[k].position.x);
            if a < 0.0 && b >= 0.0 {
                let f = a / (a - b);
                out.push(tr.times[k - 1] + f * (tr.times[k] - tr.times[k - 1]));
            }
        }
        out
    }

    #[test]
    fn harmonic_period_and_energy() {
        let w = 2.0 * PI * 280e3;
        let period = 2.0 * PI / w;
        let mut s = IonState::calcium(Vec3::zeros());
        s.velocity.x = 1.0;
        let out = integrate(&[s], &Harmonic(w), (0.0, 100.0 * period), StepControl::Fixed { dt: period / 2000.0 }, 1).unwrap();
        let c = upward_crossings(&out.trajectories[0]);
        let measured = (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64;
        assert!((measured / period - 1.0).abs() < 1e-6, "{}", measured / period - 1.0);
        // period-averaged energy in the first and last oscillation
        let tr = &out.trajectories[0];
        let energy = |st: &IonState| st.kinetic_energy() + 0.5 * st.mass * w * w * st.position.norm_squared();
        let first: f64 = tr.states[..2000].iter().map(energy).sum::<f64>() / 2000.0;
        let n = tr.states.len();
        let last: f64 = tr.states[n - 2001..n - 1].iter().map(energy).sum::<f64>() / 2000.0;
        assert!(((last - first) / first).abs() < 1e-6);
        assert_eq!(out.metadata.integrator, IntegratorKind::VelocityVerlet);
    }

    #[test]
    fn zero_field_is_straight_line() {
        let mut s = IonState::calcium(Vec3::new(1e-3, 0.0, 0.0));
        s.velocity = Vec3::new(1.0, 2.0, 1000.0);
        let out = integrate(&[s], &Free, (0.0, 1e-4), StepControl::Fixed { dt: 1e-7 }, 0).unwrap();
        let f = out.final_states[0];
        assert_eq!(f.velocity, s.velocity);
        assert!((f.position - (s.position + 1e-4 * s.velocity)).norm() < 1e-13 * f.position.norm());
    }

    #[test]
    fn leaving_the_domain_is_an_exit_record() {
        let mut s = IonState::calcium(Vec3::zeros());
        s.velocity.z = 2e4;
        let out = integrate(&[s], &Free, (0.0, 1e-3), StepControl::Fixed { dt: 1e-7 }, 0).unwrap();
        let e = out.exit_of(0).unwrap();
        assert!(e.state.position.z >= 1.0 && e.time < 1e-3);
    }

    #[test]
    fn adaptive_fallback_for_damping() {
        let (w, g) = (1.0e6, 3.0e4);
        let mut s = IonState::calcium(Vec3::new(1e-6, 0.0, 0.0));
        s.velocity = Vec3::zeros();
        let t1 = 2e-5;
        let out = integrate(&[s], &Damped(w, g), (0.0, t1), StepControl::Auto { dt: 1e-8, rtol: 1e-9 }, 0).unwrap();
        assert_eq!(out.metadata.integrator, IntegratorKind::DormandPrince45);
        let wd = (w * w - 0.25 * g * g).sqrt();
        let exact = 1e-6 * (-0.5 * g * t1).exp() * ((wd * t1).cos() + 0.5 * g / wd * (wd * t1).sin());
        assert!((out.final_states[0].position.x - exact).abs() < 1e-7 * 1e-6);
    }

    #[test]
    fn step_underflow_is_an_error() {
        struct Singular;
        impl ForceField for Singular {
            fn accelerations(&self, s: &[IonState], _: f64, out: &mut [Vec3]) {
                for (o, st) in out.iter_mut().zip(s) {
                    *o = Vec3::new(-1.0 / st.position.x.powi(3), 0.0, 0.0);
                }
            }
        }
        let s = IonState::calcium(Vec3::new(1e-9, 0.0, 0.0));
        let r = integrate(
            &[s],
            &Singular,
            (0.0, 1.0),
            StepControl::Adaptive { rtol: 1e-9, atol: 1e-20, dt_initial: 1e-9, dt_min: 1e-12 },
            0,
        );
        assert!(matches!(r, Err(DynamicsError::StepUnderflow { .. })));
    }
}
