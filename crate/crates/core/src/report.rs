//! Report envelopes and serialization (JSON documents, CSV series).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{OplimError, Result};

pub const SCHEMA: &str = "oplim-report/1";

/// Settings echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub target: String,
    pub n_max: usize,
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
}

/// One `(n, value, stderr)` row of a plot-data file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn new(name: impl Into<String>) -> Self {
        Series { name: name.into(), points: Vec::new() }
    }

    pub fn push(&mut self, n: usize, value: f64, stderr: f64) {
        self.points.push(SeriesPoint { n, value, stderr });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub description: String,
    pub config: ConfigEcho,
    pub pass: bool,
    pub result: Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Series>,
}

impl Report {
    pub fn new(config: ConfigEcho, description: impl Into<String>, result: impl Serialize, pass: bool) -> Result<Self> {
        let result = serde_json::to_value(result)
            .map_err(|e| OplimError::Schema { location: "report".into(), message: e.to_string() })?;
        Ok(Report {
            schema: SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: None,
            description: description.into(),
            config,
            pass,
            result,
            series: Vec::new(),
        })
    }

    pub fn with_series(mut self, series: Vec<Series>) -> Self {
        self.series = series;
        self
    }

    pub fn stamped(mut self, on: bool) -> Self {
        self.timestamp = on.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values are serializable");
        s.push('\n');
        s
    }

    /// `series,n,value,stderr` rows; non-finite values print as `inf`/`nan`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,n,value,stderr\n");
        for s in &self.series {
            for p in &s.points {
                let _ = writeln!(out, "{},{},{},{}", s.name, p.n, p.value, p.stderr);
            }
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    /// Writes to `path`, or stdout when `None`.
    pub fn write(&self, format: Format, path: Option<&Path>) -> Result<()> {
        let text = self.render(format);
        match path {
            Some(p) => std::fs::write(p, text)?,
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}
