use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beamline::{detection_draw, STREAM_THERMAL, STREAM_TRIGGER};
use super::{Beamline, ExtractionRecord, LossReason, ProtocolError, TrapOutcome};
use crate::constants::{ca40_mass, ELEMENTARY_CHARGE};
use crate::dynamics::{sample_thermal_state, trigger_and_waveform, SwitchWaveform, ThermalSource, TriggerModel};
use crate::seeds::sub_seed;

/// Everything that makes shot `k` reproducible: source temperature, trigger
/// timing, switching waveform and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotSource {
    pub thermal: ThermalSource,
    pub trigger: TriggerModel,
    pub waveform: SwitchWaveform,
    pub seed: u64,
}

impl ShotSource {
    pub fn new(thermal: ThermalSource, trigger: TriggerModel, waveform: SwitchWaveform, seed: u64) -> Self {
        Self {
            thermal,
            trigger: TriggerModel {
                seed: sub_seed(seed, &[STREAM_TRIGGER]),
                ..trigger
            },
            waveform,
            seed,
        }
    }

    /// Trap stage of shot `sample`.
    pub fn extract(&self, beamline: &Beamline, sample: u64) -> Result<TrapOutcome, ProtocolError> {
        let well = beamline.trap.thermal_well();
        let thermal_seed = sub_seed(self.seed, &[STREAM_THERMAL]);
        let ion = sample_thermal_state(&self.thermal, &well, thermal_seed, sample, ca40_mass(), ELEMENTARY_CHARGE)?;
        let wf = trigger_and_waveform(
            &self.trigger,
            &self.waveform,
            beamline.trap.rf(),
            beamline.trap.request_time(),
            sample,
        );
        beamline.trap.extract(beamline.trap.with_micromotion(ion), &wf)
    }
}

/// Outcome of one shot through the whole beam line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shot {
    Arrived(ExtractionRecord),
    Lost(LossReason),
}

impl Shot {
    pub fn record(&self) -> Option<&ExtractionRecord> {
        match self {
            Shot::Arrived(r) => Some(r),
            Shot::Lost(_) => None,
        }
    }
}

/// Cache of trap-stage results by sample index. The trap stage does not
/// depend on the lens voltage or the lens-side displacement, so scans over
/// those reuse the same ions.
#[derive(Debug, Clone, Default)]
pub struct BeamBank {
    exits: BTreeMap<u64, TrapOutcome>,
}

impl BeamBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.exits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exits.is_empty()
    }

    /// Run the trap stage for every listed sample not yet in the bank.
    pub fn fill(&mut self, beamline: &Beamline, source: &ShotSource, samples: &[u64]) -> Result<(), ProtocolError> {
        let missing: Vec<u64> = samples.iter().copied().filter(|s| !self.exits.contains_key(s)).collect();
        let done: Vec<Result<(u64, TrapOutcome), ProtocolError>> = missing
            .par_iter()
            .map(|&s| source.extract(beamline, s).map(|o| (s, o)))
            .collect();
        for r in done {
            let (s, o) = r?;
            self.exits.insert(s, o);
        }
        Ok(())
    }

    pub fn get(&self, sample: u64) -> Option<&TrapOutcome> {
        self.exits.get(&sample)
    }

    /// Full shots for `samples`, in order, with the trap stage taken from
    /// the bank (filled on demand).
    pub fn shots(&mut self, beamline: &Beamline, source: &ShotSource, samples: &[u64]) -> Result<Vec<Shot>, ProtocolError> {
        self.fill(beamline, source, samples)?;
        let exits: Vec<(u64, TrapOutcome)> = samples.iter().map(|&s| (s, self.exits[&s])).collect();
        Ok(exits
            .par_iter()
            .map(|(s, outcome)| match outcome {
                TrapOutcome::Exited(exit) => {
                    let detected = detection_draw(source.seed, *s, beamline.config.detector_efficiency);
                    match beamline.record(*s, exit, detected) {
                        Ok(r) => Shot::Arrived(r),
                        Err(reason) => Shot::Lost(reason),
                    }
                }
                TrapOutcome::Lost(reason) => Shot::Lost(*reason),
            })
            .collect())
    }
}
