use serde::{Deserialize, Serialize};

/// One extracted ion as seen at the detector plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub sample: u64,
    pub trigger_time_s: f64,
    /// Time of flight from the trigger to the detector plane.
    pub exit_time_s: f64,
    pub plane_z_m: f64,
    pub hit_position_m: [f64; 2],
    /// Transverse position where the ion crosses the razor-blade plane.
    pub razor_position_m: [f64; 2],
    pub transverse_velocity_m_s: [f64; 2],
    pub kinetic_energy_ev: f64,
    pub detected: bool,
}
