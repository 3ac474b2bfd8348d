//! Tabular results and their CSV, JSON and SVG renderings.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Shortest round-trip form, switching to exponent notation outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(v) if !v.is_finite() => Value::String(format_float(*v)),
            other => serde_json::to_value(other).expect("cell serializes"),
        }
    }
}

pub struct Column {
    pub name: &'static str,
    pub doc: &'static str,
}

pub const fn col(name: &'static str, doc: &'static str) -> Column {
    Column { name, doc }
}

pub struct Series {
    pub name: String,
    pub y: Vec<f64>,
    pub err: Option<Vec<f64>>,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
    pub log_y: bool,
}

pub struct Report {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<(&'static str, Value)>,
    pub pass: bool,
    pub plot: Option<Plot>,
}

impl Report {
    pub fn new(columns: Vec<Column>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            summary: Vec::new(),
            pass: true,
            plot: None,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &'static str, value: impl Serialize) {
        self.summary.push((key, serde_json::to_value(value).expect("summary serializes")));
    }

    pub fn render(&self, format: Format, cfg: &RunConfig) -> Result<String, csv::Error> {
        match format {
            Format::Csv => self.csv(cfg),
            Format::Json => Ok(self.json(cfg)),
        }
    }

    fn csv(&self, cfg: &RunConfig) -> Result<String, csv::Error> {
        let mut out = String::new();
        let _ = writeln!(out, "# qmunu {} config-sha256={}", cfg.command, cfg.hash());
        let _ = writeln!(out, "# config {}", serde_json::to_string(cfg).expect("config serializes"));
        for c in &self.columns {
            let _ = writeln!(out, "# column {}: {}", c.name, c.doc);
        }
        let _ = writeln!(out, "# pass {}", self.pass);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        let body = w.into_inner().map_err(|e| e.into_error())?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    fn json(&self, cfg: &RunConfig) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.name.to_string(), v.json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let summary: Map<String, Value> = self.summary.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let columns: Vec<Value> = self
            .columns
            .iter()
            .map(|c| json!({"name": c.name, "doc": c.doc}))
            .collect();
        let doc = json!({
            "command": cfg.command,
            "config_sha256": cfg.hash(),
            "config": cfg,
            "pass": self.pass,
            "summary": summary,
            "columns": columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
        s.push('\n');
        s
    }
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

impl Plot {
    /// Scatter-and-line chart with optional error bars; no external tools.
    pub fn svg(&self) -> String {
        let (w, h) = (640.0, 400.0);
        let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
        let ty = |v: f64| if self.log_y { v.max(1e-300).log10() } else { v };
        let ys = self.series.iter().flat_map(|s| {
            s.y.iter().enumerate().flat_map(move |(i, &v)| {
                let e = s.err.as_ref().map_or(0.0, |e| e[i]);
                [v - e, v + e]
            })
        });
        let ys: Vec<f64> = ys.filter(|v| v.is_finite() && (!self.log_y || *v > 0.0)).map(ty).collect();
        let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let x0 = self.x.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut x1 = self.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x0 = if x0.is_finite() { x0 } else { 0.0 };
        if !(x1 > x0) {
            x1 = x0 + 1.0;
        }
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (ty(y) - y0) / (y1 - y0) * (h - top - bottom);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
            h - bottom,
            w - right
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y0 + f * (y1 - y0);
            let yp = h - bottom - f * (h - top - bottom);
            let label = if self.log_y { format!("1e{yv:.1}") } else { format!("{yv:.3e}") };
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, left - 6.0, yp + 4.0);
            let xv = x0 + f * (x1 - x0);
            let xp = px(xv);
            let _ = writeln!(s, r#"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, h - bottom + 16.0, format_float(xv));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 10.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            escape(&self.y_label)
        );
        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = self
                .x
                .iter()
                .zip(&series.y)
                .filter(|(_, y)| y.is_finite() && (!self.log_y || **y > 0.0))
                .map(|(&x, &y)| (px(x), py(y)))
                .collect();
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, path.join(" "));
            for (x, y) in &pts {
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2.5" fill="{color}"/>"#);
            }
            if let Some(err) = &series.err {
                for ((&x, &y), &e) in self.x.iter().zip(&series.y).zip(err) {
                    if e > 0.0 && (!self.log_y || y - e > 0.0) {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{0:.1}" x2="{0:.1}" y1="{1:.1}" y2="{2:.1}" stroke="{color}"/>"#,
                            px(x),
                            py(y - e),
                            py(y + e)
                        );
                    }
                }
            }
            let ly = top + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" text-anchor="end" fill="{color}">{}</text>"#,
                w - right - 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
