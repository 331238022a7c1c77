//! BAOAB splitting for underdamped Langevin dynamics (laser-cooled ions).

use rand::Rng;
use rand_distr::StandardNormal;

use super::{IonState, Vec3};
use crate::constants::BOLTZMANN;

/// Conservative accelerations for the active ions.
pub trait LangevinForces {
    fn accelerations(&self, states: &[IonState], active: &[bool], t: f64, out: &mut [Vec3]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaoabLangevin {
    pub dt: f64,
    pub damping_rate: f64,
    pub temperature: f64,
}

impl BaoabLangevin {
    /// Advance all active ions by one step. `acc` must hold the accelerations
    /// at the start of the step and is updated to the end of the step.
    pub fn step<R: Rng>(
        &self,
        states: &mut [IonState],
        active: &[bool],
        acc: &mut [Vec3],
        t: f64,
        forces: &dyn LangevinForces,
        rng: &mut R,
    ) {
        let h = self.dt;
        let c1 = (-self.damping_rate * h).exp();
        let c2 = (1.0 - c1 * c1).max(0.0).sqrt();
        for (i, s) in states.iter_mut().enumerate() {
            if !active[i] {
                continue;
            }
            s.velocity += 0.5 * h * acc[i];
            s.position += 0.5 * h * s.velocity;
            let sv = (BOLTZMANN * self.temperature / s.mass).sqrt();
            let noise = if sv > 0.0 {
                Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                )
            } else {
                Vec3::zeros()
            };
            s.velocity = c1 * s.velocity + c2 * sv * noise;
            s.position += 0.5 * h * s.velocity;
        }
        forces.accelerations(states, active, t + h, acc);
        for (i, s) in states.iter_mut().enumerate() {
            if active[i] {
                s.velocity += 0.5 * h * acc[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;
    use std::f64::consts::PI;

    struct Harmonic(f64);

    impl LangevinForces for Harmonic {
        fn accelerations(&self, states: &[IonState], _: &[bool], _: f64, out: &mut [Vec3]) {
            for (o, s) in out.iter_mut().zip(states) {
                *o = -self.0 * self.0 * s.position;
            }
        }
    }

    #[test]
    fn damped_motion_relaxes_to_minimum() {
        let w = 2.0 * PI * 280e3;
        let f = Harmonic(w);
        let mut s = [IonState::calcium(Vec3::new(1e-6, -2e-6, 3e-6))];
        s[0].velocity = Vec3::new(1.0, 0.5, -2.0);
        let e0 = s[0].kinetic_energy() + 0.5 * s[0].mass * w * w * s[0].position.norm_squared();
        let integ = BaoabLangevin {
            dt: 2.0 * PI / w / 50.0,
            damping_rate: 2e4,
            temperature: 0.0,
        };
        let mut acc = [Vec3::zeros()];
        f.accelerations(&s, &[true], 0.0, &mut acc);
        let mut rng = rng_for(1, &[]);
        for k in 0..20_000 {
            integ.step(&mut s, &[true], &mut acc, k as f64 * integ.dt, &f, &mut rng);
        }
        assert!(s[0].kinetic_energy() < 1e-3 * e0);
        assert!(s[0].position.norm() < 1e-3 * 3e-6);
    }

    #[test]
    fn thermalises_to_bath_temperature() {
        let w = 2.0 * PI * 280e3;
        let f = Harmonic(w);
        let t_bath = 2e-3;
        let integ = BaoabLangevin {
            dt: 2.0 * PI / w / 40.0,
            damping_rate: 2e5,
            temperature: t_bath,
        };
        let mut s = [IonState::calcium(Vec3::zeros())];
        let mut acc = [Vec3::zeros()];
        let mut rng = rng_for(2, &[]);
        let mut sum = 0.0;
        let n = 400_000;
        for k in 0..n {
            integ.step(&mut s, &[true], &mut acc, k as f64 * integ.dt, &f, &mut rng);
            sum += s[0].velocity.norm_squared();
        }
        let t_kin = s[0].mass * sum / n as f64 / (3.0 * BOLTZMANN);
        assert!((t_kin / t_bath - 1.0).abs() < 0.05, "T = {t_kin}");
    }
}
