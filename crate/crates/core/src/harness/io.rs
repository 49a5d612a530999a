//! Readers for every file the toolkit writes.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::ScanPhase;

pub const TRACE_HEADER: &str = "t,err_mm,vel_mm_s,force_N";
pub const METRICS_HEADER: &str = "kp,kv,ti,c_sp,c_ss,c_st,c_crit,cost,constraint";
pub const ACQUISITION_HEADER: &str = "kp,kv,cei";
pub const REPORT_HEADER: &str = "iter,kp,kv,ti,cost,constraint,acq";
pub const SCAN_HEADER: &str = "phase,gain,peak_mm,exceeded";
pub const RELAY_HEADER: &str = "stage,amplitude,Tu_s,Ku";
pub const COMPARE_HEADER: &str = "method,seed,final_cost,iterations,violations";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub err_mm: f64,
    pub vel_mm_s: f64,
    #[serde(rename = "force_N")]
    pub force_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub kp: f64,
    pub kv: f64,
    pub ti: f64,
    pub c_sp: f64,
    pub c_ss: f64,
    pub c_st: f64,
    pub c_crit: f64,
    pub cost: f64,
    pub constraint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRow {
    pub kp: f64,
    pub kv: f64,
    pub cei: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iter: usize,
    pub kp: f64,
    pub kv: f64,
    pub ti: f64,
    pub cost: f64,
    pub constraint: f64,
    /// Empty for initial-design rows.
    pub acq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub phase: ScanPhase,
    pub gain: f64,
    pub peak_mm: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayRow {
    pub stage: u8,
    pub amplitude: f64,
    #[serde(rename = "Tu_s")]
    pub tu_s: f64,
    #[serde(rename = "Ku")]
    pub ku: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub seed: u64,
    pub final_cost: f64,
    /// Tuning experiments, initial design included (1 for relay).
    pub iterations: usize,
    pub violations: usize,
}

/// Parses a CSV whose header must equal `header` exactly.
pub fn read_csv<T: DeserializeOwned, R: Read>(r: R, header: &str) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(r);
    let got = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != header {
        return Err(Error::config(
            "E_SCHEMA",
            format!("expected header `{header}`, found `{got}`"),
        ));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv_file<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    read_csv(fs::File::open(path)?, header)
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes rows with the csv crate; the header comes from the field names.
pub fn write_rows<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkdownTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Extracts the pipe tables of a markdown document.
pub fn read_markdown_tables(text: &str) -> Vec<MarkdownTable> {
    let cells = |line: &str| -> Vec<String> {
        line.trim()
            .trim_matches('|')
            .split('|')
            .map(|c| c.trim().to_string())
            .collect()
    };
    let is_rule = |line: &str| {
        let t = line.trim().trim_matches('|');
        !t.is_empty() && t.chars().all(|c| matches!(c, '-' | ':' | '|' | ' '))
    };
    let mut out = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i + 1 < lines.len() {
        if lines[i].trim_start().starts_with('|') && is_rule(lines[i + 1]) {
            let headers = cells(lines[i]);
            let mut rows = Vec::new();
            i += 2;
            while i < lines.len() && lines[i].trim_start().starts_with('|') {
                rows.push(cells(lines[i]));
                i += 1;
            }
            out.push(MarkdownTable { headers, rows });
        } else {
            i += 1;
        }
    }
    out
}
