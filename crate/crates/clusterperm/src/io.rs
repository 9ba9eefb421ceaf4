//! CSV ingestion.
//!
//! Two schemas are accepted, both comma separated with a header row:
//!
//! * raw: `cluster_id,treated,outcome[,post][,x1,...,xk]`
//! * estimates: `cluster_id,treated,estimate`, one row per cluster
//!
//! `treated` and `post` are `0` or `1`. Row numbers in errors are file line
//! numbers, so the header is line 1.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use clusterperm_core::estimators::{ClusterDataset, Observation};
use clusterperm_core::permtest::ClusterEstimates;
use serde::{Deserialize, Serialize};

/// Which layout a file follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    /// Observation-level rows.
    Raw,
    /// One precomputed estimate per cluster.
    Estimates,
}

/// Ingestion failure.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    /// The file could not be opened or read.
    #[error("{path}: {source}")]
    Io {
        /// File path.
        path: String,
        /// Cause.
        source: std::io::Error,
    },
    /// Malformed CSV.
    #[error("line {line}: {source}")]
    Csv {
        /// Line number.
        line: u64,
        /// Cause.
        source: csv::Error,
    },
    /// The header does not fit the schema.
    #[error("header mismatch: expected {expected}, found `{found}`")]
    Header {
        /// Expected layout.
        expected: &'static str,
        /// Header as read.
        found: String,
    },
    /// A field could not be parsed.
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    Parse {
        /// Line number.
        line: u64,
        /// Column name.
        column: String,
        /// Offending text.
        value: String,
    },
    /// Parsed values violate a dataset invariant.
    #[error("{0}")]
    Invalid(String),
    /// The core rejected the data.
    #[error(transparent)]
    Core(#[from] clusterperm_core::Error),
}

/// Parsed file.
#[derive(Debug, Clone)]
pub enum Ingested {
    /// Observation-level data.
    Raw(ClusterDataset),
    /// Cluster estimates with their ids, treated first.
    Estimates {
        /// Cluster ids in estimate order.
        ids: Vec<String>,
        /// The estimates.
        estimates: ClusterEstimates,
    },
}

/// Reads `path` with the given schema.
pub fn ingest_csv(path: &Path, schema: Schema) -> Result<Ingested, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    match schema {
        Schema::Raw => read_raw(file).map(Ingested::Raw),
        Schema::Estimates => read_estimates(file).map(|(ids, estimates)| Ingested::Estimates { ids, estimates }),
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Csv { line, source: e }
}

fn parse_f64(record: &csv::StringRecord, i: usize, column: &str) -> Result<f64, IngestError> {
    let raw = record.get(i).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::Parse { line: line_of(record), column: column.into(), value: raw.into() }),
    }
}

fn parse_flag(record: &csv::StringRecord, i: usize, column: &str) -> Result<bool, IngestError> {
    match record.get(i).unwrap_or("").trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IngestError::Parse { line: line_of(record), column: column.into(), value: other.into() }),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

/// Parses the raw schema.
pub fn read_raw<R: Read>(r: R) -> Result<ClusterDataset, IngestError> {
    const EXPECTED: &str = "cluster_id,treated,outcome[,post][,x1..xk]";
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header.len() < 3 || header[0] != "cluster_id" || header[1] != "treated" || header[2] != "outcome" {
        return Err(IngestError::Header { expected: EXPECTED, found: header.join(",") });
    }
    let has_post = header.get(3).is_some_and(|h| h == "post");
    let first_cov = if has_post { 4 } else { 3 };
    let covariate_names: Vec<String> = header[first_cov..].to_vec();
    if covariate_names.iter().any(|c| c.is_empty() || c == "post") {
        return Err(IngestError::Header { expected: EXPECTED, found: header.join(",") });
    }

    let mut rows = Vec::new();
    let mut first_flag: HashMap<String, (bool, u64)> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let id = record.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(IngestError::Parse { line, column: "cluster_id".into(), value: String::new() });
        }
        let treated = parse_flag(&record, 1, "treated")?;
        match first_flag.get(&id) {
            Some(&(t, first)) if t != treated => {
                return Err(IngestError::Invalid(format!(
                    "line {line}: treated flag of cluster `{id}` differs from line {first}"
                )))
            }
            Some(_) => {}
            None => {
                first_flag.insert(id.clone(), (treated, line));
            }
        }
        let outcome = parse_f64(&record, 2, "outcome")?;
        let post = if has_post { Some(parse_flag(&record, 3, "post")?) } else { None };
        let covariates = covariate_names
            .iter()
            .enumerate()
            .map(|(j, name)| parse_f64(&record, first_cov + j, name))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(Observation { cluster_id: id, treated, outcome, post, covariates });
    }
    Ok(ClusterDataset::from_observations(rows, covariate_names)?)
}

/// Parses the estimates schema; returns ids and estimates, treated first in
/// input order.
pub fn read_estimates<R: Read>(r: R) -> Result<(Vec<String>, ClusterEstimates), IngestError> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header != ["cluster_id", "treated", "estimate"] {
        return Err(IngestError::Header { expected: "cluster_id,treated,estimate", found: header.join(",") });
    }
    let mut treated = Vec::new();
    let mut control = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let id = record.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(IngestError::Parse { line, column: "cluster_id".into(), value: String::new() });
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(IngestError::Invalid(format!("line {line}: cluster `{id}` already given on line {first}")));
        }
        let flag = parse_flag(&record, 1, "treated")?;
        let v = parse_f64(&record, 2, "estimate")?;
        if flag {
            treated.push((id, v));
        } else {
            control.push((id, v));
        }
    }
    let tv: Vec<f64> = treated.iter().map(|p| p.1).collect();
    let cv: Vec<f64> = control.iter().map(|p| p.1).collect();
    let estimates = ClusterEstimates::from_groups(&tv, &cv)?;
    let ids = treated.into_iter().chain(control).map(|p| p.0).collect();
    Ok((ids, estimates))
}
