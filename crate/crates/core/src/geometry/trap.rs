use serde::{Deserialize, Serialize};

use super::{require_positive, GeometryError};

/// Number of independent dc electrodes on each blade.
pub const SEGMENT_COUNT: usize = 15;

/// Axial layout of the segmented blade trap as written in a run configuration.
///
/// Widths are listed for electrodes 1..=15 in axial order. Unless explicit
/// centers are given, electrodes are packed with `gap_m` between neighbours
/// and the whole layout is shifted so the reference electrode is centred on
/// the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapLayoutConfig {
    pub segment_widths_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_centers_m: Option<Vec<f64>>,
    pub gap_m: f64,
    pub reference_segment: usize,
    pub blade_separation_loading_m: f64,
    pub blade_separation_experimental_m: f64,
    pub rf_rail_present: bool,
    pub detector_plane_z_m: f64,
    pub razor_plane_z_m: f64,
}

impl Default for TrapLayoutConfig {
    fn default() -> Self {
        // Electrode 1 has no published width; it takes the loading-zone width.
        let mut widths = vec![2.8e-3; 5];
        widths.extend(std::iter::repeat(0.7e-3).take(8));
        widths.push(2.8e-3);
        widths.push(20.6e-3);
        Self {
            segment_widths_m: widths,
            segment_centers_m: None,
            gap_m: 0.1e-3,
            reference_segment: 10,
            blade_separation_loading_m: 4.0e-3,
            blade_separation_experimental_m: 2.0e-3,
            rf_rail_present: true,
            detector_plane_z_m: 0.287,
            razor_plane_z_m: 0.257,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Electrode number, 1-based as on the blade drawing.
    pub index: usize,
    pub center: f64,
    pub width: f64,
}

impl Segment {
    pub fn start(&self) -> f64 {
        self.center - 0.5 * self.width
    }

    pub fn end(&self) -> f64 {
        self.center + 0.5 * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapZone {
    Loading,
    Taper,
    Experimental,
    Deflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry {
    pub segments: Vec<Segment>,
    pub gap_width: f64,
    pub blade_face_separation_loading: f64,
    pub blade_face_separation_experimental: f64,
    pub rf_rail_present: bool,
    pub detector_plane_z: f64,
    pub razor_plane_z: f64,
    pub trap_center_z: f64,
}

impl TrapGeometry {
    pub fn segment(&self, index: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.index == index)
    }

    /// Axial distance from the start of `first` to the end of `last`.
    pub fn span(&self, first: usize, last: usize) -> Option<f64> {
        Some(self.segment(last)?.end() - self.segment(first)?.start())
    }

    pub fn zone(index: usize) -> TrapZone {
        match index {
            1..=4 => TrapZone::Loading,
            5 => TrapZone::Taper,
            15 => TrapZone::Deflection,
            _ => TrapZone::Experimental,
        }
    }

    /// Downstream end of the blades, where the rf rails wrap around.
    pub fn blade_end_z(&self) -> f64 {
        self.segments
            .iter()
            .map(Segment::end)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Distance from the trap axis to the blade front face in the experimental zone.
    pub fn radial_half_aperture(&self) -> f64 {
        0.5 * self.blade_face_separation_experimental
    }
}

pub fn build_trap_geometry(config: &TrapLayoutConfig) -> Result<TrapGeometry, GeometryError> {
    let widths = &config.segment_widths_m;
    if widths.len() != SEGMENT_COUNT {
        return Err(GeometryError::SegmentCount {
            expected: SEGMENT_COUNT,
            found: widths.len(),
        });
    }
    for (i, &w) in widths.iter().enumerate() {
        require_positive(&format!("width of segment {}", i + 1), w)?;
    }
    require_positive("gap width", config.gap_m)?;
    require_positive("loading-zone blade separation", config.blade_separation_loading_m)?;
    require_positive(
        "experimental-zone blade separation",
        config.blade_separation_experimental_m,
    )?;
    require_positive("detector plane distance", config.detector_plane_z_m)?;
    require_positive("razor plane distance", config.razor_plane_z_m)?;
    if config.razor_plane_z_m >= config.detector_plane_z_m {
        return Err(GeometryError::PlaneOrder {
            razor: config.razor_plane_z_m,
            detector: config.detector_plane_z_m,
        });
    }
    if !(1..=SEGMENT_COUNT).contains(&config.reference_segment) {
        return Err(GeometryError::UnknownReference(config.reference_segment));
    }

    let centers: Vec<f64> = match &config.segment_centers_m {
        Some(c) => {
            if c.len() != SEGMENT_COUNT {
                return Err(GeometryError::SegmentCount {
                    expected: SEGMENT_COUNT,
                    found: c.len(),
                });
            }
            c.clone()
        }
        None => {
            let mut out = Vec::with_capacity(SEGMENT_COUNT);
            let mut cursor = 0.0;
            for &w in widths {
                out.push(cursor + 0.5 * w);
                cursor += w + config.gap_m;
            }
            out
        }
    };

    let reference = centers[config.reference_segment - 1];
    let segments: Vec<Segment> = centers
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(i, (&c, &w))| Segment {
            index: i + 1,
            center: c - reference,
            width: w,
        })
        .collect();

    for pair in segments.windows(2) {
        if pair[1].start() < pair[0].end() {
            return Err(GeometryError::SegmentOverlap {
                first: pair[0].index,
                second: pair[1].index,
            });
        }
    }

    Ok(TrapGeometry {
        segments,
        gap_width: config.gap_m,
        blade_face_separation_loading: config.blade_separation_loading_m,
        blade_face_separation_experimental: config.blade_separation_experimental_m,
        rf_rail_present: config.rf_rail_present,
        detector_plane_z: config.detector_plane_z_m,
        razor_plane_z: config.razor_plane_z_m,
        trap_center_z: 0.0,
    })
}
