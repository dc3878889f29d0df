//! CSV files for datasets, states and traces. Numbers are written with 17
//! significant digits so they read back exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use emcmc::mcmc::ChainTrace;
use emcmc::Dataset;
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn write_rows(path: &Path, prefix: &str, times: &[f64], rows: &[DVector<f64>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let d = rows.first().map_or(0, |r| r.len());
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=d).map(|i| format!("{prefix}{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, r) in times.iter().zip(rows) {
        let line: Vec<String> = std::iter::once(num(*t)).chain(r.iter().map(|v| num(*v))).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    write_rows(path, "y", data.times(), data.observations())
}

pub fn write_states(path: &Path, times: &[f64], states: &[DVector<f64>]) -> Result<(), CliError> {
    write_rows(path, "x", times, states)
}

/// Reads a dataset whose first column is the observation time.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut times = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if vals.len() < 2 {
            return Err(bad(format!("row {} needs a time and at least one observation", i + 1)));
        }
        times.push(vals[0]);
        ys.push(DVector::from_column_slice(&vals[1..]));
    }
    Dataset::new(times, ys).map_err(|e| bad(e.to_string()))
}

/// Reads a headerless matrix.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            rec.iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    matrix_from_rows(&rows).map_err(bad)
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err("covariance must be a nonempty square matrix".into());
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn write_trace(path: &Path, trace: &ChainTrace) -> Result<(), CliError> {
    let mut w = create(path)?;
    let header: Vec<&str> = std::iter::once("iteration")
        .chain(trace.names.iter().map(String::as_str))
        .chain(["log_like", "accepted", "early_stop"])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..trace.len() {
        let mut line = (i + 1).to_string();
        for v in &trace.samples[i] {
            line.push(',');
            line.push_str(&num(*v));
        }
        line.push(',');
        line.push_str(&num(trace.log_like[i]));
        line.push_str(if trace.accepted[i] { ",1," } else { ",0," });
        line.push_str(&trace.early_stop[i].to_string());
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter columns of a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceColumns {
    pub names: Vec<String>,
    /// One vector per parameter.
    pub columns: Vec<Vec<f64>>,
}

impl TraceColumns {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Drops the first `fraction` of every column.
    pub fn after_burn_in(&self, fraction: f64) -> Self {
        let skip = (self.len() as f64 * fraction).floor() as usize;
        Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[skip..].to_vec()).collect(),
        }
    }
}

pub fn read_trace(path: &Path) -> Result<TraceColumns, CliError> {
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let end = headers.iter().position(|h| h == "log_like");
    if headers.first().map(String::as_str) != Some("iteration") || end.is_none() {
        return Err(bad("not a trace file (expected iteration, parameters..., log_like)".into()));
    }
    let names = headers[1..end.unwrap()].to_vec();
    let mut columns = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (j, col) in columns.iter_mut().enumerate() {
            let v = rec
                .get(j + 1)
                .ok_or_else(|| bad("short row".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(e.to_string()))?;
            col.push(v);
        }
    }
    Ok(TraceColumns { names, columns })
}
