//! Result-bundle output: CSV tables with a `#` metadata header, scan-table
//! input, and small hand-written SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::protocols::{ScanAxis, ScanRow, ScanTable, ScanTableError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("{path}: {source}")]
    Table {
        path: String,
        #[source]
        source: ScanTableError,
    },
}

/// A CSV table with documented columns. Floats are written in Rust's
/// shortest round-trip form, so output is reproducible byte for byte.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// `columns` pairs each header name with a one-line description.
    pub fn new(columns: &[(&str, &str)]) -> Self {
        Self {
            metadata: Vec::new(),
            columns: columns.iter().map(|(n, d)| (n.to_string(), d.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}: {v}");
        }
        for (n, d) in &self.columns {
            let _ = writeln!(out, "# column {n}: {d}");
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|(n, _)| n)).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"));
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.render())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest round-trip representation; `NaN` and infinities spelled out.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn scan_table_csv(table: &ScanTable) -> CsvTable {
    let unit = match table.axis {
        ScanAxis::BladeX | ScanAxis::ApertureX | ScanAxis::Displacement => "m",
        ScanAxis::DeflectionVx | ScanAxis::LensVoltage => "V",
    };
    let mut t = CsvTable::new(&[
        ("position", "scan position (unit in metadata)"),
        ("shots", "ions fired at this position"),
        ("hits", "ions counted by the detector"),
    ])
    .meta("axis", table.axis.name())
    .meta("position_unit", unit);
    for r in &table.rows {
        t.push(vec![num(r.position), r.shots.to_string(), r.hits.to_string()]);
    }
    t
}

/// Read a scan table written by [`scan_table_csv`] or by hand: `#` lines are
/// comments (an `# axis: name` line sets the axis, default `blade_x`), then a
/// header `position,shots,hits`.
pub fn read_scan_table(path: &Path) -> Result<ScanTable, IoError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File { path: p.clone(), source })?;
    let csv_err = |message: String| IoError::Csv { path: p.clone(), message };
    let mut axis = ScanAxis::BladeX;
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("axis:") {
                axis = ScanAxis::parse(name.trim()).ok_or_else(|| csv_err(format!("unknown scan axis `{}`", name.trim())))?;
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name || h.starts_with(&format!("{name}_")))
            .ok_or_else(|| csv_err(format!("missing column `{name}`")))
    };
    let (ip, is, ih) = (col("position")?, col("shots")?, col("hits")?);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(format!("row {row}: {e}")))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let position: f64 = field(ip)
            .parse()
            .map_err(|_| csv_err(format!("row {row}: position `{}` is not a number", field(ip))))?;
        let shots: u64 = field(is)
            .parse()
            .map_err(|_| csv_err(format!("row {row}: shots `{}` is not a count", field(is))))?;
        let hits: u64 = field(ih)
            .parse()
            .map_err(|_| csv_err(format!("row {row}: hits `{}` is not a count", field(ih))))?;
        rows.push(ScanRow { position, shots, hits });
    }
    ScanTable::new(axis, rows).map_err(|source| IoError::Table { path: p, source })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self {
            label: label.into(),
            points,
            style,
        }
    }
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{x:.1e}")
    } else {
        let s = format!("{x:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Logarithmic axes; non-positive values are dropped on a log axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Axes {
    pub x_log: bool,
    pub y_log: bool,
}

impl Axes {
    fn map(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let f = |v: f64, log: bool| if log { v.log10() } else { v };
        let q = (f(p.0, self.x_log), f(p.1, self.y_log));
        (q.0.is_finite() && q.1.is_finite()).then_some(q)
    }
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    if !log {
        return nice_ticks(lo, hi).into_iter().map(|t| (t, label(t))).collect();
    }
    let (a, b) = (lo.ceil() as i32, hi.floor() as i32);
    if b < a {
        return nice_ticks(lo, hi).into_iter().map(|t| (t, label(10f64.powf(t)))).collect();
    }
    (a..=b).map(|k| (k as f64, label(10f64.powi(k)))).collect()
}

/// A minimal x-y plot with linear axes, ticks and a legend.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    svg_plot_axes(title, x_label, y_label, series, Axes::default())
}

pub fn svg_plot_axes(title: &str, x_label: &str, y_label: &str, series: &[Series], axes: Axes) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (80.0, 20.0, 40.0, 60.0);
    let mapped: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter_map(|&p| axes.map(p)).collect())
        .collect();
    let pts: Vec<(f64, f64)> = mapped.iter().flatten().copied().collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.0), b.max(p.0), c.min(p.1), d.max(p.1)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi > lo {
            let m = 0.05 * (hi - lo);
            (lo - m, hi + m)
        } else {
            let m = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            (lo - m, hi + m)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for (t, text) in ticks(x0, x1, axes.x_log) {
        let x = sx(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, h - mb, h - mb + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{text}</text>"#, h - mb + 18.0);
    }
    for (t, text) in ticks(y0, y1, axes.y_log) {
        let y = sy(t);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/>"#, ml - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{text}</text>"#, ml - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (mt + h - mb) / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        let p: Vec<(f64, f64)> = mapped[k].iter().map(|p| (sx(p.0), sy(p.1))).collect();
        match ser.style {
            Style::Line if p.len() > 1 => {
                let d: Vec<String> = p.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, d.join(" "));
            }
            _ => {
                for (x, y) in &p {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#);
                }
            }
        }
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/>"#, w - mr - 150.0, ly - 9.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, w - mr - 135.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
