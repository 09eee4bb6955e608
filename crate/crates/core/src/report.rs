//! Tabular reports with a typed column schema, plus CSV/JSON/SVG emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    LayerSweep,
    Eval,
    Positional,
    DataEfficiency,
    Baselines,
    Concealment,
    Unfaithful,
    StepTrajectory,
    DifficultyControl,
    BestOfN,
    SelfCorrection,
    Routing,
    ScoreDistribution,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::LayerSweep => "layer_sweep",
            ReportKind::Eval => "eval",
            ReportKind::Positional => "positional",
            ReportKind::DataEfficiency => "data_efficiency",
            ReportKind::Baselines => "baselines",
            ReportKind::Concealment => "concealment",
            ReportKind::Unfaithful => "unfaithful",
            ReportKind::StepTrajectory => "step_trajectory",
            ReportKind::DifficultyControl => "difficulty_control",
            ReportKind::BestOfN => "best_of_n",
            ReportKind::SelfCorrection => "self_correction",
            ReportKind::Routing => "routing",
            ReportKind::ScoreDistribution => "score_distribution",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Text,
    Integer,
    Real,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    /// Whether cells may be null.
    #[serde(default)]
    pub nullable: bool,
}

impl Column {
    pub fn new(name: &str, ty: ColumnType) -> Self {
        Self {
            name: name.into(),
            ty,
            nullable: false,
        }
    }

    pub fn nullable(name: &str, ty: ColumnType) -> Self {
        Self {
            nullable: true,
            ..Self::new(name, ty)
        }
    }

    fn accepts(&self, v: &Value) -> bool {
        match v {
            Value::Null => self.nullable,
            Value::String(_) => self.ty == ColumnType::Text,
            Value::Bool(_) => self.ty == ColumnType::Bool,
            Value::Number(n) => match self.ty {
                ColumnType::Integer => n.is_i64() || n.is_u64(),
                ColumnType::Real => true,
                _ => false,
            },
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_fingerprint: Option<String>,
    pub probe_fingerprint: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub config: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    pub fn set(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.config.insert(key.into(), value.into());
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub kind: ReportKind,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
    pub provenance: Provenance,
}

/// A real-valued cell; non-finite values become null.
pub fn real(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn opt_real(x: Option<f64>) -> Value {
    x.map_or(Value::Null, real)
}

impl Report {
    pub fn new(kind: ReportKind, columns: Vec<Column>, provenance: Provenance) -> Self {
        Self {
            report_version: REPORT_VERSION,
            kind,
            columns,
            rows: Vec::new(),
            provenance,
        }
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<()> {
        self.check_row(&row)?;
        self.rows.push(row);
        Ok(())
    }

    fn check_row(&self, row: &[Value]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} row has {} cells, schema has {}",
                self.kind.as_str(),
                row.len(),
                self.columns.len()
            )));
        }
        for (col, v) in self.columns.iter().zip(row) {
            if !col.accepts(v) {
                return Err(Error::InvalidArgument(format!(
                    "{} column {:?} rejects value {v}",
                    self.kind.as_str(),
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.report_version != REPORT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.report_version,
                expected: REPORT_VERSION,
            });
        }
        self.rows.iter().try_for_each(|r| self.check_row(r))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Real values of one column (nulls skipped).
    pub fn column_f64(&self, name: &str) -> Vec<f64> {
        let Some(i) = self.column_index(name) else {
            return Vec::new();
        };
        self.rows.iter().filter_map(|r| r[i].as_f64()).collect()
    }

    /// `(x, y)` pairs from rows where both cells are numeric.
    pub fn column_pairs(&self, x: &str, y: &str) -> Vec<(f64, f64)> {
        let (Some(xi), Some(yi)) = (self.column_index(x), self.column_index(y)) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|r| Some((r[xi].as_f64()?, r[yi].as_f64()?)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(s)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.columns.iter().map(|c| csv_field(&c.name)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Value::Null => String::new(),
                    Value::String(s) => csv_field(s),
                    other => other.to_string(),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> Result<String> {
        let pts = |xn: &str, yn: &str| self.column_pairs(xn, yn);
        match self.kind {
            ReportKind::LayerSweep => Ok(line_chart(
                "Probe AUROC by layer",
                "layer",
                "CV AUROC",
                &[("cv_auroc", pts("layer", "cv_auroc"))],
            )),
            ReportKind::StepTrajectory => Ok(line_chart(
                "Mean probe score by step",
                "step",
                "probe score",
                &[
                    ("correct", pts("step", "correct_mean")),
                    ("wrong", pts("step", "wrong_mean")),
                ],
            )),
            ReportKind::DataEfficiency => Ok(line_chart(
                "CV AUROC by training size",
                "records",
                "CV AUROC",
                &[("cv_auroc", pts("size", "cv_auroc"))],
            )),
            ReportKind::ScoreDistribution => {
                let (Some(si), Some(li)) =
                    (self.column_index("probe_score"), self.column_index("label"))
                else {
                    return Err(Error::InvalidArgument("score report lacks columns".into()));
                };
                let ci = self.column_index("verbalized_confidence");
                let mut correct = Vec::new();
                let mut wrong = Vec::new();
                for row in &self.rows {
                    let (Some(s), Some(l)) = (row[si].as_f64(), row[li].as_i64()) else {
                        continue;
                    };
                    let c = ci.and_then(|i| row[i].as_f64()).unwrap_or(0.0);
                    if l == 1 { &mut wrong } else { &mut correct }.push((s, c));
                }
                Ok(scatter_chart(
                    "Probe score vs verbalized confidence",
                    "probe error score",
                    "verbalized confidence",
                    &[("correct", correct), ("wrong", wrong)],
                ))
            }
            other => Err(Error::InvalidArgument(format!(
                "no chart defined for {} reports",
                other.as_str()
            ))),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

pub fn render(report: &Report, format: ReportFormat) -> Result<String> {
    report.validate()?;
    match format {
        ReportFormat::Csv => Ok(report.to_csv()),
        ReportFormat::Json => report.to_json(),
        ReportFormat::Svg => report.to_svg(),
    }
}

pub fn emit_report(report: &Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = render(report, format)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 4] = ["#2b8a3e", "#c92a2a", "#1864ab", "#e67700"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(series: &[(&str, Vec<(f64, f64)>)]) -> Self {
        let pts = series.iter().flat_map(|(_, p)| p.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.5, y1 + 0.5);
        }
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        xml(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 14.0,
        xml(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        xml(ylabel),
        y = H / 2.0
    );
    for (v, anchor, x, y) in [
        (f.x0, "middle", f.px(f.x0), H - PAD + 16.0),
        (f.x1, "middle", f.px(f.x1), H - PAD + 16.0),
        (f.y0, "end", PAD - 6.0, f.py(f.y0) + 4.0),
        (f.y1, "end", PAD - 6.0, f.py(f.y1) + 4.0),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
            tick(v)
        );
    }
    s
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y0}" width="10" height="10" fill="{color}"/><text x="{tx}" y="{ty}">{}</text>"#,
            xml(name),
            x = W - PAD - 90.0,
            y0 = y - 9.0,
            tx = W - PAD - 75.0,
            ty = y
        );
    }
}

fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    let f = Frame::fit(series);
    let mut s = svg_open(title, xlabel, ylabel, &f);
    for (i, (name, pts)) in series.iter().enumerate() {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-series="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            xml(name),
            PALETTE[i % PALETTE.len()],
            coords.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| *n).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

fn scatter_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> String {
    let f = Frame::fit(series);
    let mut s = svg_open(title, xlabel, ylabel, &f);
    for (i, (name, pts)) in series.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<g class="series" data-series="{}" fill="{}" fill-opacity="0.6">"#,
            xml(name),
            PALETTE[i % PALETTE.len()]
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
                f.px(x),
                f.py(y)
            );
        }
        s.push_str("</g>\n");
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| *n).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sweep() -> Report {
        let mut r = Report::new(
            ReportKind::LayerSweep,
            vec![
                Column::new("layer", ColumnType::Integer),
                Column::new("depth_fraction", ColumnType::Real),
                Column::nullable("cv_auroc", ColumnType::Real),
            ],
            Provenance::default().seed("cv", 0).set("C", 0.1),
        );
        r.push(vec![json!(0), real(0.0), real(0.5)]).unwrap();
        r.push(vec![json!(1), real(0.5), real(0.91)]).unwrap();
        r
    }

    #[test]
    fn empty_report_is_header_only_csv() {
        let r = Report::new(
            ReportKind::Routing,
            vec![
                Column::new("a", ColumnType::Integer),
                Column::new("b,c", ColumnType::Text),
            ],
            Provenance::default(),
        );
        assert_eq!(r.to_csv(), "a,\"b,c\"\n");
    }

    #[test]
    fn json_round_trip() {
        let r = sweep();
        let back = Report::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), r.to_json().unwrap());
    }

    #[test]
    fn schema_enforced() {
        let mut r = sweep();
        assert!(r.push(vec![json!("x"), real(0.0), real(0.5)]).is_err());
        assert!(r.push(vec![json!(2), real(0.0)]).is_err());
        assert!(r.push(vec![json!(2), Value::Null, real(0.5)]).is_err());
        r.push(vec![json!(2), real(1.0), real(f64::NAN)]).unwrap();
        assert!(r.to_csv().ends_with("2,1.0,\n"));
    }

    #[test]
    fn trajectory_svg_has_polyline_per_class() {
        let mut r = Report::new(
            ReportKind::StepTrajectory,
            vec![
                Column::new("step", ColumnType::Integer),
                Column::new("correct_mean", ColumnType::Real),
                Column::new("wrong_mean", ColumnType::Real),
            ],
            Provenance::default(),
        );
        for k in 1..=3 {
            r.push(vec![json!(k), real(0.2), real(0.3 + 0.1 * k as f64)])
                .unwrap();
        }
        let svg = r.to_svg().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-series="correct""#) && svg.contains(r#"data-series="wrong""#));
    }

    #[test]
    fn unwritable_path_errors() {
        let err = emit_report(&sweep(), ReportFormat::Csv, "/nonexistent-dir/x.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
