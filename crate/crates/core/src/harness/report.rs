use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::evaluate::EvaluationReport;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "threshold,bleu,al,laal,start_offset,end_offset,n_instances,n_failures";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub bleu: f64,
    pub al: f64,
    pub laal: f64,
    pub start_offset: f64,
    pub end_offset: f64,
    pub n_instances: usize,
    pub n_failures: usize,
}

impl From<&EvaluationReport> for SweepRow {
    fn from(r: &EvaluationReport) -> Self {
        SweepRow {
            threshold: r.threshold,
            bleu: r.quality.bleu,
            al: r.latency.al,
            laal: r.latency.laal,
            start_offset: r.latency.start_offset_s,
            end_offset: r.latency.end_offset_s,
            n_instances: r.n_instances,
            n_failures: r.n_failures,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a EvaluationReport>) -> Self {
        let mut rows: Vec<SweepRow> = reports.into_iter().map(SweepRow::from).collect();
        rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
        SweepReport { rows }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::argument(format!("unknown report format {other:?}"))),
        }
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

/// Six-decimal value, as printed in the CSV.
fn rounded(v: f64) -> f64 {
    fixed(v).parse().unwrap_or(v)
}

pub fn render_csv(report: &SweepReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fixed(r.threshold),
            fixed(r.bleu),
            fixed(r.al),
            fixed(r.laal),
            fixed(r.start_offset),
            fixed(r.end_offset),
            r.n_instances,
            r.n_failures
        );
    }
    out
}

/// A JSON array of row objects with the CSV's fields and rounding.
/// Undefined values (no emissions anywhere) become `null`.
pub fn render_json(report: &SweepReport) -> String {
    let rows: Vec<SweepRow> = report
        .rows
        .iter()
        .map(|r| SweepRow {
            threshold: rounded(r.threshold),
            bleu: rounded(r.bleu),
            al: rounded(r.al),
            laal: rounded(r.laal),
            start_offset: rounded(r.start_offset),
            end_offset: rounded(r.end_offset),
            ..*r
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
    s.push('\n');
    s
}

pub fn render(report: &SweepReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report),
    }
}

pub fn emit_report(report: &SweepReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render(report, format)).map_err(|e| Error::io(path, e))
}

/// Parses the CSV written by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<SweepReport> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected CSV header".into(),
        });
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = |message: String| Error::Parse { line: n + 2, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(e.to_string()));
        let count = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        rows.push(SweepRow {
            threshold: num(f[0])?,
            bleu: num(f[1])?,
            al: num(f[2])?,
            laal: num(f[3])?,
            start_offset: num(f[4])?,
            end_offset: num(f[5])?,
            n_instances: count(f[6])?,
            n_failures: count(f[7])?,
        });
    }
    Ok(SweepReport { rows })
}
