//! CSV and JSON ingestion and emission, scenario config parsing and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mest::{DataError, RegressionData};
use crate::sim::Scenario;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: no column named `{name}` (header: {header})")]
    MissingColumn { path: PathBuf, name: String, header: String },

    #[error("{path}: row {row}, column `{col}`: cannot use `{value}` as a finite number")]
    BadCell { path: PathBuf, row: usize, col: String, value: String },

    #[error("{path}: {msg}")]
    Shape { path: PathBuf, msg: String },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

/// A numeric table: header plus row-major values. Data rows are numbered
/// from 1 in error messages (the header is row 0).
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .zip(&header)
            .map(|(cell, col)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(IoError::BadCell {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: col.clone(),
                    value: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<f64>, IoError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Shape { path: path.to_path_buf(), msg: "no data rows".into() });
    }
    Ok(Table { header, rows })
}

/// Read a headed numeric CSV: `response` is y, every other column is a
/// covariate, and `intercept` prepends a column of ones.
pub fn load_csv(path: &Path, response: &str, intercept: bool) -> Result<RegressionData, IoError> {
    let t = read_table(path)?;
    let yi = t.header.iter().position(|h| h == response).ok_or_else(|| IoError::MissingColumn {
        path: path.to_path_buf(),
        name: response.to_string(),
        header: t.header.join(","),
    })?;
    let n = t.rows.len();
    let cov: Vec<usize> = (0..t.header.len()).filter(|&j| j != yi).collect();
    let p = cov.len() + usize::from(intercept);
    if p == 0 {
        return Err(IoError::Shape { path: path.to_path_buf(), msg: "no covariate columns and no intercept".into() });
    }
    let x = DMatrix::from_fn(n, p, |i, j| match (intercept, j) {
        (true, 0) => 1.0,
        (true, j) => t.rows[i][cov[j - 1]],
        (false, j) => t.rows[i][cov[j]],
    });
    let y = DVector::from_fn(n, |i, _| t.rows[i][yi]);
    Ok(RegressionData::new(x, y)?)
}

/// Read a headed numeric CSV as a design matrix, using every column.
pub fn load_design_csv(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let t = read_table(path)?;
    let p = t.header.len();
    Ok(DMatrix::from_fn(t.rows.len(), p, |i, j| t.rows[i][j]))
}

/// Write a regression data set with columns y, x1, …, xp.
pub fn write_regression_csv(path: &Path, data: &RegressionData) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for i in 0..data.n() {
        let mut rec = vec![format!("{:e}", data.y()[i])];
        rec.extend(data.row(i).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write serializable rows with a header derived from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write a numeric matrix with the given column names.
pub fn write_matrix_csv(path: &Path, names: &[String], m: &DMatrix<f64>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(names).map_err(csv_err(path))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}"))).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s + "\n").map_err(io_err(path))
}

/// Parse a scenario file; unknown keys are rejected with their name.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, IoError> {
    toml::from_str(text).map_err(|e| IoError::Config { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, String), IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok((parse_scenario(&text, path)?, text))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full argument vector of the run.
    pub command: String,
    /// SHA-256 of the config file, or of the canonical argument string when
    /// there is no config file.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// ISO-8601 UTC timestamp.
    pub timestamp: String,
    /// Worker count in effect, if fixed.
    pub threads: Option<usize>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: String, hashed: &[u8], seed: u64, threads: Option<usize>) -> Self {
        Self {
            command,
            config_hash: sha256_hex(hashed),
            seed,
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            threads,
            outputs: Vec::new(),
        }
    }
}
