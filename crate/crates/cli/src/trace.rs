//! Per-run trace CSV and the plot-ready projection of it.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use scalesim::engine::StepRecord;

use crate::CliError;

pub const TRACE_HEADER: &str = "# scalesim trace v1";
pub const TRACE_COLUMNS: [&str; 10] = [
    "t",
    "workload",
    "demand",
    "target",
    "live_hosts",
    "pending",
    "requested",
    "released",
    "arrivals",
    "loss",
];
pub const PLOTDATA_COLUMNS: [&str; 4] = ["t", "demand", "quantile_target", "live_hosts"];

pub fn write_trace<W: Write>(mut out: W, records: &[StepRecord]) -> Result<(), csv::Error> {
    writeln!(out, "{TRACE_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace and writes `t, demand, quantile_target, live_hosts`.
pub fn plotdata<W: Write>(path: &Path, out: W) -> Result<usize, CliError> {
    let schema = |message: String| CliError::Schema {
        path: path.display().to_string(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    if first.trim_end() != TRACE_HEADER {
        return Err(schema(format!(
            "expected first line {TRACE_HEADER:?}, found {:?}",
            first.trim_end()
        )));
    }
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| schema(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(format!("missing column {name:?}")))
    };
    let idx = [find("t")?, find("demand")?, find("target")?, find("live_hosts")?];
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOTDATA_COLUMNS)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let fields: Vec<&str> = idx.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
        w.write_record(&fields)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        rows += 1;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(rows)
}
