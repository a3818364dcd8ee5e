//! CSV tables and JSON run logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

/// Version of the JSON run-log layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Seventeen significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// File opened for writing, starting with the `# generated …` header line.
pub fn stamped(path: &Path) -> std::io::Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# generated unix={}", unix_seconds())?;
    Ok(w)
}

pub fn write_csv(path: &Path, table: &Table) -> Result<(), String> {
    let io = |e: std::io::Error| format!("{}: {e}", path.display());
    let w = stamped(path).map_err(io)?;
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| format!("{}: {e}", path.display());
    csv.write_record(&table.header).map_err(err)?;
    for row in &table.rows {
        csv.write_record(row).map_err(err)?;
    }
    csv.flush().map_err(io)
}

#[derive(Serialize)]
struct RunLog<'a> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    generated_unix: u64,
    pass: bool,
    parameters: Value,
    summary: Value,
    warnings: &'a [String],
    outputs: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn write_log(
    path: &Path,
    command: &str,
    seed: u64,
    pass: bool,
    parameters: Value,
    summary: Value,
    warnings: &[String],
    outputs: &[PathBuf],
) -> Result<(), String> {
    let log = RunLog {
        schema_version: SCHEMA_VERSION,
        command,
        seed,
        generated_unix: unix_seconds(),
        pass,
        parameters,
        summary,
        warnings,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&log).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}
