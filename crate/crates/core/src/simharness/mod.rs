//! Monte-Carlo studies comparing the adjusted test with its rivals.
//!
//! Replication `r` draws all its randomness from stream `(seed, r)`, and
//! every grid cell of a study reuses the same underlying standard normal
//! draws, rescaled and shifted per cell. Results therefore do not depend on
//! how replications are scheduled, and differences between cells are not
//! blurred by independent noise.

mod did;
mod normal_location;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permtest::Method;

pub use did::{did_replication, run_did_study, DidConfig, DidData};
pub use normal_location::{run_normal_location_study, NormalLocationConfig};

/// AR(1) recursion `u_t = rho u_{t-1} + v_t` from `u_0 = 0`, with the first
/// `burn_in` values dropped.
pub fn ar1_simulate(rho: f64, innovations: &[f64], burn_in: usize) -> Result<Vec<f64>> {
    if !(libm::fabs(rho) < 1.0) {
        return Err(Error::Domain { what: "autoregressive coefficient", value: rho });
    }
    if burn_in > innovations.len() {
        return Err(Error::Contract("burn-in longer than the innovation series"));
    }
    let mut u = 0.0;
    let mut out = Vec::with_capacity(innovations.len() - burn_in);
    for (t, v) in innovations.iter().enumerate() {
        u = rho * u + v;
        if t >= burn_in {
            out.push(u);
        }
    }
    Ok(out)
}

/// Short name used in result tables.
pub fn method_label(m: Method) -> &'static str {
    match m {
        Method::AdjustedPermutation => "AP",
        Method::ClusterT => "IM",
        Method::ClusterRobustT => "BCH",
        Method::WildClusterBootstrap => "WCB",
    }
}

/// Rejection count of one method in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// Grid value (`mu1` or `delta`).
    pub param: f64,
    /// Number of high-variance clusters.
    pub h: usize,
    /// Method.
    pub method: Method,
    /// Rejections.
    pub rejections: u64,
    /// Replications.
    pub replications: u64,
}

impl RateRow {
    /// Rejection frequency.
    pub fn rate(&self) -> f64 {
        self.rejections as f64 / self.replications as f64
    }

    /// `sqrt(p (1 - p) / R)`.
    pub fn mc_se(&self) -> f64 {
        let p = self.rate();
        libm::sqrt(p * (1.0 - p) / self.replications as f64)
    }
}

/// Output of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    /// `"normal-location"` or `"did"`.
    pub study: String,
    /// Name of the grid parameter column.
    pub param_name: String,
    /// One row per cell and method.
    pub rows: Vec<RateRow>,
    /// Configuration as key/value pairs.
    pub config: Vec<(String, String)>,
    /// Combined checksum of the simulated data.
    pub data_checksum: u64,
}

impl StudyResult {
    /// Rate for a cell and method, if present.
    pub fn find(&self, param: f64, h: usize, method: Method) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.param == param && r.h == h && r.method == method)
    }

    /// CSV with `#`-prefixed header lines carrying the configuration.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# study={}", self.study);
        for (k, v) in &self.config {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "# data_checksum={:016x}", self.data_checksum);
        let _ = writeln!(s, "{},h,method,rejection_rate,mc_se", self.param_name);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{:.6}", r.param, r.h, method_label(r.method), r.rate(), r.mc_se());
        }
        s
    }
}

/// FNV-1a over the bit patterns of a sequence of floats.
pub fn checksum<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn list<T: core::fmt::Display>(v: &[T]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    parts.join(";")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ar1_zero_rho_is_identity() {
        let v = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(ar1_simulate(0.0, &v, 1).unwrap(), vec![-2.0, 3.0, 0.5]);
    }

    #[test]
    fn ar1_recursion_and_domain() {
        assert_eq!(ar1_simulate(0.5, &[1.0, 1.0, 1.0], 0).unwrap(), vec![1.0, 1.5, 1.75]);
        assert!(ar1_simulate(1.0, &[1.0], 0).is_err());
        assert!(ar1_simulate(0.5, &[1.0], 2).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = StudyResult {
            study: "x".into(),
            param_name: "mu1".into(),
            rows: vec![RateRow { param: 2.5, h: 1, method: Method::AdjustedPermutation, rejections: 1, replications: 4 }],
            config: vec![("seed".into(), "7".into())],
            data_checksum: 1,
        };
        let csv = r.to_csv();
        assert!(csv.contains("# seed=7\n"));
        assert!(csv.contains("mu1,h,method,rejection_rate,mc_se\n2.5,1,AP,0.250000,0.216506\n"));
    }
}
