use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    BladeX,
    ApertureX,
    DeflectionVx,
    LensVoltage,
    Displacement,
}

impl ScanAxis {
    pub fn name(&self) -> &'static str {
        match self {
            ScanAxis::BladeX => "blade_x",
            ScanAxis::ApertureX => "aperture_x",
            ScanAxis::DeflectionVx => "deflection_vx",
            ScanAxis::LensVoltage => "lens_voltage",
            ScanAxis::Displacement => "displacement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ScanAxis::BladeX,
            ScanAxis::ApertureX,
            ScanAxis::DeflectionVx,
            ScanAxis::LensVoltage,
            ScanAxis::Displacement,
        ]
        .into_iter()
        .find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub position: f64,
    pub shots: u64,
    pub hits: u64,
}

impl ScanRow {
    pub fn fraction(&self) -> f64 {
        self.hits as f64 / self.shots as f64
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanTableError {
    #[error("row {row}: hits ({hits}) exceed shots ({shots})")]
    HitsExceedShots { row: usize, hits: u64, shots: u64 },
    #[error("row {row}: shots must be at least 1")]
    NoShots { row: usize },
    #[error("row {row}: positions are not strictly monotone")]
    NotMonotone { row: usize },
    #[error("row {row}: position is not finite")]
    NonFinite { row: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub axis: ScanAxis,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    /// Build and validate. Row numbers in errors are 1-based.
    pub fn new(axis: ScanAxis, rows: Vec<ScanRow>) -> Result<Self, ScanTableError> {
        let t = Self { axis, rows };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ScanTableError> {
        let mut direction = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            let row = i + 1;
            if !r.position.is_finite() {
                return Err(ScanTableError::NonFinite { row });
            }
            if r.shots == 0 {
                return Err(ScanTableError::NoShots { row });
            }
            if r.hits > r.shots {
                return Err(ScanTableError::HitsExceedShots {
                    row,
                    hits: r.hits,
                    shots: r.shots,
                });
            }
            if i > 0 {
                let d = r.position - self.rows[i - 1].position;
                if d == 0.0 || (direction != 0.0 && d.signum() != direction) {
                    return Err(ScanTableError::NotMonotone { row });
                }
                direction = d.signum();
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.position).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(position: f64, shots: u64, hits: u64) -> ScanRow {
        ScanRow { position, shots, hits }
    }

    #[test]
    fn validation_names_the_row() {
        let err = ScanTable::new(ScanAxis::BladeX, vec![row(0.0, 10, 3), row(1.0, 10, 11), row(2.0, 10, 1)]).unwrap_err();
        assert_eq!(err, ScanTableError::HitsExceedShots { row: 2, hits: 11, shots: 10 });
        assert!(err.to_string().contains("row 2"));
        assert!(matches!(
            ScanTable::new(ScanAxis::BladeX, vec![row(0.0, 1, 0), row(1.0, 1, 0), row(0.5, 1, 0)]),
            Err(ScanTableError::NotMonotone { row: 3 })
        ));
        assert!(ScanTable::new(ScanAxis::BladeX, vec![row(2.0, 1, 0), row(1.0, 1, 1)]).is_ok());
    }

    #[test]
    fn axis_names_round_trip() {
        for a in [ScanAxis::BladeX, ScanAxis::Displacement, ScanAxis::LensVoltage] {
            assert_eq!(ScanAxis::parse(a.name()), Some(a));
        }
    }
}
