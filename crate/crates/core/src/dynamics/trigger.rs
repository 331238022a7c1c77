use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fields::RfDriveConfig;
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchShape {
    Linear,
    /// Saturating exponential normalised to reach the end level at the rise time.
    Exponential,
}

const EXPONENTIAL_RATE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchWaveform {
    pub start_level_v: f64,
    pub end_level_v: f64,
    pub rise_time_s: f64,
    pub shape: SwitchShape,
    pub trigger_time_s: f64,
}

impl Default for SwitchWaveform {
    fn default() -> Self {
        Self {
            start_level_v: 0.0,
            end_level_v: 500.0,
            rise_time_s: 20e-9,
            shape: SwitchShape::Linear,
            trigger_time_s: 0.0,
        }
    }
}

impl SwitchWaveform {
    /// Fraction of the switch completed at time t, in [0, 1].
    pub fn progress(&self, t: f64) -> f64 {
        let s = (t - self.trigger_time_s) / self.rise_time_s;
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        match self.shape {
            SwitchShape::Linear => s,
            SwitchShape::Exponential => {
                (1.0 - (-EXPONENTIAL_RATE * s).exp()) / (1.0 - (-EXPONENTIAL_RATE).exp())
            }
        }
    }

    pub fn level(&self, t: f64) -> f64 {
        self.start_level_v + (self.end_level_v - self.start_level_v) * self.progress(t)
    }

    pub fn end_time(&self) -> f64 {
        self.trigger_time_s + self.rise_time_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerModel {
    /// RF phase (rad) at which the switch fires; 0 is the rising zero crossing.
    pub rf_phase_setpoint_rad: f64,
    pub jitter_sigma_s: f64,
    pub seed: u64,
}

impl Default for TriggerModel {
    fn default() -> Self {
        Self {
            rf_phase_setpoint_rad: 0.0,
            jitter_sigma_s: 0.34e-9,
            seed: 0,
        }
    }
}

impl TriggerModel {
    /// First time >= `request_time` at which the RF phase equals the setpoint.
    pub fn snapped_time(&self, rf: &RfDriveConfig, request_time: f64) -> f64 {
        let w = rf.angular_frequency();
        let two_pi = 2.0 * std::f64::consts::PI;
        let k = ((w * request_time - self.rf_phase_setpoint_rad) / two_pi).ceil();
        (two_pi * k + self.rf_phase_setpoint_rad) / w
    }

    /// Trigger time for shot `sample`, including the Gaussian jitter.
    pub fn trigger_time(&self, rf: &RfDriveConfig, request_time: f64, sample: u64) -> f64 {
        let t = self.snapped_time(rf, request_time);
        if self.jitter_sigma_s <= 0.0 {
            return t;
        }
        let mut rng = rng_for(self.seed, &[0x7219, sample]);
        let n = Normal::new(0.0, self.jitter_sigma_s).expect("positive sigma");
        t + n.sample(&mut rng)
    }
}

/// Waveform for electrodes 9 and 10 for shot `sample` requested at `request_time`.
pub fn trigger_and_waveform(
    trigger: &TriggerModel,
    template: &SwitchWaveform,
    rf: &RfDriveConfig,
    request_time: f64,
    sample: u64,
) -> SwitchWaveform {
    SwitchWaveform {
        trigger_time_s: trigger.trigger_time(rf, request_time, sample),
        ..*template
    }
}
