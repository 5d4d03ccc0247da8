//! CSV tables and static SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controlloop::TrackingRun;
use crate::paspectrum::Tradeoff;
use crate::sweep::{GridPoint, OracleComparison, SweepPoint};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to write: no rows")]
    Empty,
    #[error("row {row} has {found} cells, header has {expected}")]
    Shape { row: usize, expected: usize, found: usize },
    #[error("cannot write `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_num(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    fn check(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(ReportError::Empty);
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.header.len() {
                return Err(ReportError::Shape { row: i, expected: self.header.len(), found: r.len() });
            }
        }
        Ok(())
    }

    /// Numeric column by header name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        self.rows
            .iter()
            .map(|r| match &r[k] {
                Cell::Num(x) => Some(*x),
                Cell::Int(i) => Some(*i as f64),
                Cell::Text(_) => None,
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        self.check()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Io { path: "<memory>".into(), message: e.to_string() })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the table; on an empty table nothing is created.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = self.to_csv_string()?;
        write_file(path, &text)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ReportError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub const ROTATION_HEADER: [&str; 5] = ["angle_deg", "pte_single_small", "pte_single_large", "pte_fixed3", "pte_ae3"];
pub const LATERAL_HEADER: [&str; 5] = ["x_mm", "pte_single_small", "pte_single_large", "pte_fixed3", "pte_ae3"];
pub const GRID_HEADER: [&str; 4] = ["theta_deg", "i_tx2_a", "i_tx3_a", "pte"];
pub const SPECTRUM_HEADER: [&str; 3] = ["duty", "loss_db", "suppression_db"];
pub const ORACLE_HEADER: [&str; 11] = [
    "pose",
    "x_mm",
    "y_mm",
    "z_mm",
    "axis_x",
    "axis_y",
    "axis_z",
    "active_channels",
    "pte_grid",
    "pte_ae",
    "pte_bound",
];

pub fn baseline_table(points: &[SweepPoint], header: &[&str; 5]) -> Table {
    let mut t = Table::new(header);
    for p in points {
        let b = &p.ptes;
        t.push(
            [p.axis_value, b.single_small, b.single_large, b.three_coil_fixed, b.three_coil_ae].map(Cell::Num).to_vec(),
        );
    }
    t
}

pub fn grid_table(points: &[GridPoint]) -> Table {
    let mut t = Table::new(&GRID_HEADER);
    for p in points {
        t.push([p.theta_deg, p.i_tx2_a, p.i_tx3_a, p.pte].map(Cell::Num).to_vec());
    }
    t
}

pub fn spectrum_table(points: &[Tradeoff]) -> Table {
    let mut t = Table::new(&SPECTRUM_HEADER);
    for p in points {
        t.push([p.duty, p.fundamental_loss_db, p.third_harmonic_suppression_db].map(Cell::Num).to_vec());
    }
    t
}

pub fn oracle_table(rows: &[OracleComparison]) -> Table {
    let mut t = Table::new(&ORACLE_HEADER);
    for (i, r) in rows.iter().enumerate() {
        let (p, a) = (r.pose.position_mm, r.pose.axis);
        let mut row = vec![Cell::Int(i as i64)];
        row.extend([p.x, p.y, p.z, a.x, a.y, a.z].map(Cell::Num));
        row.push(Cell::Int(r.active_channels as i64));
        row.extend([r.pte_grid, r.pte_ae, r.pte_bound].map(Cell::Num));
        t.push(row);
    }
    t
}

/// Run log: time, phase, per-channel current amplitude, duty and polarity
/// bit (1 = inverted), PTE and delivered energy so far.
pub fn run_log_table(run: &TrackingRun) -> Table {
    let n = run.samples.first().map_or(0, |s| s.drive.currents.len());
    let mut header = vec!["t_s".to_string(), "phase".to_string()];
    header.extend((1..=n).map(|i| format!("current_A_{i}")));
    header.extend((1..=n).map(|i| format!("duty_{i}")));
    header.extend((1..=n).map(|i| format!("polarity_{i}")));
    header.extend(["pte".to_string(), "cumulative_delivered_J".to_string()]);
    let mut t = Table { header, rows: Vec::new() };
    for s in &run.samples {
        let mut row = vec![Cell::Num(s.t_s), Cell::Text(s.phase.as_str().into())];
        row.extend(s.drive.currents.iter().map(|p| Cell::Num(p.amplitude)));
        row.extend(s.duties.iter().map(|d| Cell::Num(*d)));
        row.extend(s.drive.currents.iter().map(|p| Cell::Int(i64::from(p.polarity.sign() < 0.0))));
        row.extend([Cell::Num(s.pte), Cell::Num(s.cumulative_delivered_j)]);
        t.push(row);
    }
    t
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Line plot of every numeric column after the first against the first.
pub fn svg_plot(table: &Table, title: &str) -> Result<String> {
    table.check()?;
    let x = table.column(&table.header[0]).unwrap_or_default();
    let series: Vec<(&str, Vec<f64>)> =
        table.header[1..].iter().filter_map(|h| table.column(h).map(|c| (h.as_str(), c))).collect();
    let (w, h, m) = (720.0, 440.0, 60.0);
    let finite = |v: &f64| v.is_finite();
    let (x0, x1) = bounds(x.iter().copied().filter(finite));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().copied()).filter(finite));
    let (y0, y1) = (y0.min(0.0), if y1 > y0.min(0.0) { y1 } else { y0.min(0.0) + 1.0 });
    let sx = |v: f64| m + (v - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" points="{m},{m} {m},{b} {r},{b}"/>"#,
        b = h - m,
        r = w - m
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 20.0,
        escape(&table.header[0])
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            sx(v),
            h - m + 14.0,
            short(v)
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            m - 4.0,
            sy(v) + 4.0,
            short(v)
        );
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
            .collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = m + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            w - m + 4.0 - 120.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(table: &Table, title: &str, path: &Path) -> Result<()> {
    let text = svg_plot(table, title)?;
    write_file(path, &text)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if lo.is_finite() {
        (lo, if hi > lo { hi } else { lo + 1.0 })
    } else {
        (0.0, 1.0)
    }
}

fn short(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
