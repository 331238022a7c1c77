use serde::{Deserialize, Serialize};

use super::{require_positive, GeometryError};

pub const LENS_SCHEMA_VERSION: u32 = 1;

/// Einzel-lens dimensions. Axial coordinates are lens-local: z = 0 is the
/// upstream face of the first electrode and ions travel toward +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LensConfig {
    pub electrode1_thickness_m: f64,
    pub electrode1_inner_diameter_m: f64,
    pub electrode2_thickness_m: f64,
    pub electrode2_inner_diameter_m: f64,
    pub spacer_thickness_m: f64,
    pub spacer_inner_diameter_m: f64,
    pub plate_thickness_m: f64,
    pub plate_aperture_diameter_m: f64,
    pub outer_diameter_m: f64,
    pub insulation_gap_m: f64,
}

impl Default for LensConfig {
    fn default() -> Self {
        Self {
            electrode1_thickness_m: 0.2e-3,
            electrode1_inner_diameter_m: 8.0e-3,
            electrode2_thickness_m: 0.4e-3,
            electrode2_inner_diameter_m: 8.0e-3,
            spacer_thickness_m: 4.95e-3,
            spacer_inner_diameter_m: 16.0e-3,
            plate_thickness_m: 1.0e-3,
            plate_aperture_diameter_m: 4.0e-3,
            outer_diameter_m: 27.0e-3,
            insulation_gap_m: 0.05e-3,
        }
    }
}

impl LensConfig {
    /// Axial extent of the middle (driven) electrode in lens-local coordinates.
    pub fn middle_electrode_span(&self) -> (f64, f64) {
        let start = self.electrode1_thickness_m + self.insulation_gap_m;
        (start, start + self.electrode2_thickness_m)
    }

    pub fn total_length(&self) -> f64 {
        self.electrode1_thickness_m
            + self.electrode2_thickness_m
            + 2.0 * self.insulation_gap_m
            + self.spacer_thickness_m
            + self.plate_thickness_m
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("electrode 1 thickness", self.electrode1_thickness_m),
            ("electrode 1 inner diameter", self.electrode1_inner_diameter_m),
            ("electrode 2 thickness", self.electrode2_thickness_m),
            ("electrode 2 inner diameter", self.electrode2_inner_diameter_m),
            ("spacer thickness", self.spacer_thickness_m),
            ("spacer inner diameter", self.spacer_inner_diameter_m),
            ("plate thickness", self.plate_thickness_m),
            ("plate aperture diameter", self.plate_aperture_diameter_m),
            ("outer diameter", self.outer_diameter_m),
            ("insulation gap", self.insulation_gap_m),
        ];
        for (what, v) in fields {
            require_positive(what, v)?;
        }
        let inner = [
            self.electrode1_inner_diameter_m,
            self.electrode2_inner_diameter_m,
            self.spacer_inner_diameter_m,
            self.plate_aperture_diameter_m,
        ];
        if inner.iter().any(|&d| d >= self.outer_diameter_m) {
            return Err(GeometryError::Lens(
                "inner diameters must be smaller than the outer diameter".into(),
            ));
        }
        if self.plate_aperture_diameter_m >= self.spacer_inner_diameter_m {
            return Err(GeometryError::Lens(
                "plate aperture must be smaller than the spacer bore".into(),
            ));
        }
        Ok(())
    }
}

/// One conducting ring: a conical strip of a surface of revolution between
/// two points of the meridian half-plane (r >= 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub r0: f64,
    pub z0: f64,
    pub r1: f64,
    pub z1: f64,
}

impl Panel {
    pub fn radius(&self) -> f64 {
        0.5 * (self.r0 + self.r1)
    }

    pub fn z(&self) -> f64 {
        0.5 * (self.z0 + self.z1)
    }

    /// Width of the ring measured along the meridian.
    pub fn width(&self) -> f64 {
        (self.r1 - self.r0).hypot(self.z1 - self.z0)
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * (self.r0 + self.r1) * self.width()
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        (
            self.r0 + (self.r1 - self.r0) * t,
            self.z0 + (self.z1 - self.z0) * t,
        )
    }

    /// Shortest meridian-plane distance from (r, z) to this panel.
    pub fn distance_to(&self, r: f64, z: f64) -> f64 {
        let (dr, dz) = (self.r1 - self.r0, self.z1 - self.z0);
        let len2 = dr * dr + dz * dz;
        let t = if len2 > 0.0 {
            (((r - self.r0) * dr + (z - self.z0) * dz) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (pr, pz) = self.point_at(t);
        (r - pr).hypot(z - pz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub label: String,
    /// Electrodes sharing a terminal are held at the same voltage.
    pub terminal: String,
    pub panels: Vec<Panel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisymmetricElectrodeSet {
    pub schema_version: u32,
    pub electrodes: Vec<Electrode>,
    pub driven_terminal: String,
}

impl AxisymmetricElectrodeSet {
    /// Builds electrodes from meridian polylines, splitting every edge into
    /// `rings_per_mm` rings per millimetre (at least one per edge).
    pub fn from_polylines(
        outlines: &[(&str, &str, Vec<(f64, f64)>)],
        driven_terminal: &str,
        rings_per_mm: f64,
    ) -> Result<Self, GeometryError> {
        if !(rings_per_mm >= 1.0) || !rings_per_mm.is_finite() {
            return Err(GeometryError::Density(rings_per_mm));
        }
        let mut electrodes = Vec::with_capacity(outlines.len());
        for (label, terminal, outline) in outlines {
            if outline.iter().any(|&(r, _)| r < 0.0 || !r.is_finite()) {
                return Err(GeometryError::Lens(format!(
                    "electrode {label} has a negative radius"
                )));
            }
            let mut panels = Vec::new();
            for edge in outline.windows(2) {
                let (a, b) = (edge[0], edge[1]);
                let len = (b.0 - a.0).hypot(b.1 - a.1);
                if len == 0.0 {
                    continue;
                }
                let n = ((len * 1e3 * rings_per_mm).ceil() as usize).max(1);
                for k in 0..n {
                    let t0 = k as f64 / n as f64;
                    let t1 = (k + 1) as f64 / n as f64;
                    panels.push(Panel {
                        r0: a.0 + (b.0 - a.0) * t0,
                        z0: a.1 + (b.1 - a.1) * t0,
                        r1: a.0 + (b.0 - a.0) * t1,
                        z1: a.1 + (b.1 - a.1) * t1,
                    });
                }
            }
            electrodes.push(Electrode {
                label: label.to_string(),
                terminal: terminal.to_string(),
                panels,
            });
        }
        Ok(Self {
            schema_version: LENS_SCHEMA_VERSION,
            electrodes,
            driven_terminal: driven_terminal.to_string(),
        })
    }

    /// A sphere of radius `radius` centred on the origin, cut into `rings`
    /// chords of equal polar angle.
    pub fn sphere(radius: f64, rings: usize) -> Result<Self, GeometryError> {
        require_positive("sphere radius", radius)?;
        if rings == 0 {
            return Err(GeometryError::Density(0.0));
        }
        let panels = (0..rings)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / rings as f64;
                let b = std::f64::consts::PI * (k + 1) as f64 / rings as f64;
                Panel {
                    r0: radius * a.sin(),
                    z0: radius * a.cos(),
                    r1: radius * b.sin(),
                    z1: radius * b.cos(),
                }
            })
            .collect();
        Ok(Self {
            schema_version: LENS_SCHEMA_VERSION,
            electrodes: vec![Electrode {
                label: "sphere".into(),
                terminal: "sphere".into(),
                panels,
            }],
            driven_terminal: "sphere".into(),
        })
    }

    /// A single narrow cylindrical band of radius `radius` and axial width `width`.
    pub fn single_ring(radius: f64, z: f64, width: f64) -> Result<Self, GeometryError> {
        require_positive("ring radius", radius)?;
        require_positive("ring width", width)?;
        Ok(Self {
            schema_version: LENS_SCHEMA_VERSION,
            electrodes: vec![Electrode {
                label: "ring".into(),
                terminal: "ring".into(),
                panels: vec![Panel {
                    r0: radius,
                    z0: z - 0.5 * width,
                    r1: radius,
                    z1: z + 0.5 * width,
                }],
            }],
            driven_terminal: "ring".into(),
        })
    }

    pub fn panel_count(&self) -> usize {
        self.electrodes.iter().map(|e| e.panels.len()).sum()
    }

    pub fn panels(&self) -> impl Iterator<Item = (&Electrode, &Panel)> {
        self.electrodes
            .iter()
            .flat_map(|e| e.panels.iter().map(move |p| (e, p)))
    }

    /// Distinct terminal labels in order of first appearance.
    pub fn terminals(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.electrodes {
            if !out.contains(&e.terminal.as_str()) {
                out.push(&e.terminal);
            }
        }
        out
    }

    pub fn electrode(&self, label: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.label == label)
    }

    pub fn total_area(&self) -> f64 {
        self.panels().map(|(_, p)| p.area()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }
}

fn plate(z0: f64, thickness: f64, r_in: f64, r_out: f64) -> Vec<(f64, f64)> {
    vec![
        (r_in, z0),
        (r_out, z0),
        (r_out, z0 + thickness),
        (r_in, z0 + thickness),
        (r_in, z0),
    ]
}

/// Builds the three-electrode einzel lens. Electrodes 1 and 3 share the
/// grounded terminal `"outer"`; electrode 2 is the driven terminal `"lens"`.
pub fn build_lens_geometry(
    config: &LensConfig,
    rings_per_mm: f64,
) -> Result<AxisymmetricElectrodeSet, GeometryError> {
    config.validate()?;
    let ro = 0.5 * config.outer_diameter_m;
    let g = config.insulation_gap_m;

    let e1 = plate(
        0.0,
        config.electrode1_thickness_m,
        0.5 * config.electrode1_inner_diameter_m,
        ro,
    );
    let z2 = config.electrode1_thickness_m + g;
    let e2 = plate(
        z2,
        config.electrode2_thickness_m,
        0.5 * config.electrode2_inner_diameter_m,
        ro,
    );
    let z3 = z2 + config.electrode2_thickness_m + g;
    let rs = 0.5 * config.spacer_inner_diameter_m;
    let rp = 0.5 * config.plate_aperture_diameter_m;
    let zp = z3 + config.spacer_thickness_m;
    let zend = zp + config.plate_thickness_m;
    // Spacer and aperture plate are one conductor.
    let e3 = vec![
        (rs, z3),
        (ro, z3),
        (ro, zend),
        (rp, zend),
        (rp, zp),
        (rs, zp),
        (rs, z3),
    ];

    AxisymmetricElectrodeSet::from_polylines(
        &[
            ("electrode1", "outer", e1),
            ("electrode2", "lens", e2),
            ("electrode3", "outer", e3),
        ],
        "lens",
        rings_per_mm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lens_has_three_electrodes_and_middle_is_driven() {
        let set = build_lens_geometry(&LensConfig::default(), 10.0).unwrap();
        assert_eq!(set.electrodes.len(), 3);
        assert_eq!(set.driven_terminal, "lens");
        assert_eq!(set.electrode("electrode2").unwrap().terminal, "lens");
        assert_eq!(
            set.electrode("electrode1").unwrap().terminal,
            set.electrode("electrode3").unwrap().terminal
        );
        assert_eq!(set.terminals(), vec!["outer", "lens"]);
    }

    #[test]
    fn zero_density_is_rejected() {
        assert_eq!(
            build_lens_geometry(&LensConfig::default(), 0.0).unwrap_err(),
            GeometryError::Density(0.0)
        );
    }

    #[test]
    fn non_physical_dimensions_are_rejected() {
        let cfg = LensConfig {
            plate_aperture_diameter_m: 30e-3,
            ..Default::default()
        };
        assert!(build_lens_geometry(&cfg, 5.0).is_err());
        let cfg = LensConfig {
            insulation_gap_m: -1.0,
            ..Default::default()
        };
        assert!(build_lens_geometry(&cfg, 5.0).is_err());
    }

    #[test]
    fn doubling_density_doubles_rings_per_surface() {
        let a = build_lens_geometry(&LensConfig::default(), 10.0).unwrap();
        let b = build_lens_geometry(&LensConfig::default(), 20.0).unwrap();
        for (ea, eb) in a.electrodes.iter().zip(&b.electrodes) {
            let ratio = eb.panels.len() as f64 / ea.panels.len() as f64;
            assert!((1.8..=2.05).contains(&ratio), "{}: {ratio}", ea.label);
        }
    }

    #[test]
    fn refinement_preserves_terminals_and_area() {
        let a = build_lens_geometry(&LensConfig::default(), 2.0).unwrap();
        let b = build_lens_geometry(&LensConfig::default(), 16.0).unwrap();
        assert_eq!(a.terminals(), b.terminals());
        let smallest_cell = b
            .panels()
            .map(|(_, p)| p.area())
            .fold(f64::INFINITY, f64::min);
        assert!((a.total_area() - b.total_area()).abs() <= smallest_cell);
    }

    #[test]
    fn serialized_form_is_versioned_and_deterministic() {
        let a = build_lens_geometry(&LensConfig::default(), 3.0).unwrap().to_json();
        let b = build_lens_geometry(&LensConfig::default(), 3.0).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"schema_version\": 1"));
    }

    #[test]
    fn panel_distance() {
        let p = Panel { r0: 1.0, z0: 0.0, r1: 1.0, z1: 1.0 };
        assert!((p.distance_to(2.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((p.distance_to(1.0, 2.0) - 1.0).abs() < 1e-15);
    }
}
