use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::constants::joule_to_ev;
use crate::protocols::ExtractionRecord;

/// Fraction of a radial 2D Gaussian contained within the 1σ-equivalent radius.
const ONE_SIGMA_FRACTION: f64 = 0.683;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotStatistics {
    pub count: usize,
    pub centroid_m: [f64; 2],
    /// Per-axis 1σ of the radial Gaussian model, sqrt((var_x + var_y) / 2).
    pub sigma_radius_m: f64,
    pub full_angle_divergence_rad: f64,
    /// Radius around the centroid holding 68.3% of the detected ions.
    pub containment_radius_m: f64,
    pub containment_fraction: f64,
}

pub fn containment_to_sigma(radius: f64, fraction: f64) -> Result<f64, AnalysisError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AnalysisError::Domain {
            what: "fraction",
            value: fraction,
            domain: "(0, 1)",
        });
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(AnalysisError::Domain {
            what: "radius",
            value: radius,
            domain: "[0, inf)",
        });
    }
    Ok(radius / (-2.0 * (-fraction).ln_1p()).sqrt())
}

/// Moments of the detected hit positions at the detector plane.
pub fn spot_stats(records: &[ExtractionRecord], distance: f64) -> Result<SpotStatistics, AnalysisError> {
    if !(distance > 0.0) {
        return Err(AnalysisError::Domain {
            what: "distance",
            value: distance,
            domain: "(0, inf)",
        });
    }
    let pts: Vec<[f64; 2]> = records.iter().filter(|r| r.detected).map(|r| r.hit_position_m).collect();
    spot_stats_points(&pts, distance)
}

pub(crate) fn spot_stats_points(pts: &[[f64; 2]], distance: f64) -> Result<SpotStatistics, AnalysisError> {
    let n = pts.len();
    if n < 2 {
        return Err(AnalysisError::InsufficientData { needed: 2, got: n });
    }
    let nf = n as f64;
    // shifted by the first point so identical samples give an exact centroid
    let [x0, y0] = pts[0];
    let cx = x0 + pts.iter().map(|p| p[0] - x0).sum::<f64>() / nf;
    let cy = y0 + pts.iter().map(|p| p[1] - y0).sum::<f64>() / nf;
    let vx = pts.iter().map(|p| (p[0] - cx).powi(2)).sum::<f64>() / (nf - 1.0);
    let vy = pts.iter().map(|p| (p[1] - cy).powi(2)).sum::<f64>() / (nf - 1.0);
    let sigma = (0.5 * (vx + vy)).sqrt();
    let mut radii: Vec<f64> = pts.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).collect();
    radii.sort_by(f64::total_cmp);
    let k = ((ONE_SIGMA_FRACTION * nf).ceil() as usize).clamp(1, n) - 1;
    Ok(SpotStatistics {
        count: n,
        centroid_m: [cx, cy],
        sigma_radius_m: sigma,
        full_angle_divergence_rad: 2.0 * sigma / distance,
        containment_radius_m: radii[k],
        containment_fraction: ONE_SIGMA_FRACTION,
    })
}

pub fn tof_to_energy(time: f64, length: f64, mass: f64) -> Result<f64, AnalysisError> {
    for (what, value) in [("time", time), ("length", length), ("mass", mass)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(AnalysisError::Domain {
                what,
                value,
                domain: "(0, inf)",
            });
        }
    }
    let v = length / time;
    Ok(joule_to_ev(0.5 * mass * v * v))
}
