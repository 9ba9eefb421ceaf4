//! Two-sample problem with heterogeneous normal entries.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use serde::{Deserialize, Serialize};

use super::{checksum, list, RateRow, StudyResult};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::permkit::{AssignmentSet, Design, DEFAULT_ENUMERATION_CAP};
use crate::permtest::{adjusted_test_with_entry, lookup_bar_alpha, ClusterEstimates, Method, Side};
use crate::rivals::im_test;
use crate::rng::RngStream;

/// Settings of the normal-location study.
///
/// Entry `k` (1-based) has standard deviation `sigma_high` when
/// `k > q - h` and `sigma_low` otherwise; treated entries have mean `mu1`,
/// controls `mu0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalLocationConfig {
    /// Treated entries.
    pub q1: usize,
    /// Control entries.
    pub q0: usize,
    /// Control mean.
    pub mu0: f64,
    /// Treated means to evaluate.
    pub mu1_grid: Vec<f64>,
    /// Numbers of high-variance entries to evaluate.
    pub h_grid: Vec<usize>,
    /// Standard deviation of ordinary entries.
    pub sigma_low: f64,
    /// Standard deviation of high-variance entries.
    pub sigma_high: f64,
    /// Replications per cell.
    pub replications: usize,
    /// One-sided level.
    pub alpha: f64,
    /// Master seed.
    pub seed: u64,
}

impl Default for NormalLocationConfig {
    fn default() -> Self {
        Self {
            q1: 6,
            q0: 6,
            mu0: 0.0,
            mu1_grid: (0..=80).map(|i| i as f64 * 0.5).collect(),
            h_grid: vec![1],
            sigma_low: 1.0,
            sigma_high: 100.0,
            replications: 100_000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl NormalLocationConfig {
    fn validate(&self) -> Result<Design> {
        let design = Design::new(self.q1, self.q0)?;
        if self.replications == 0 {
            return Err(Error::Contract("replications must be positive"));
        }
        if self.mu1_grid.is_empty() || self.h_grid.is_empty() {
            return Err(Error::Contract("grids must be nonempty"));
        }
        if let Some(&h) = self.h_grid.iter().find(|&&h| h > design.q()) {
            return Err(Error::Domain { what: "h", value: h as f64 });
        }
        for &s in &[self.sigma_low, self.sigma_high] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain { what: "standard deviation", value: s });
            }
        }
        if !self.mu0.is_finite() || self.mu1_grid.iter().any(|m| !m.is_finite()) {
            return Err(Error::Contract("means must be finite"));
        }
        Ok(design)
    }

    /// Key/value description for output headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("q1".into(), format!("{}", self.q1)),
            ("q0".into(), format!("{}", self.q0)),
            ("mu0".into(), format!("{}", self.mu0)),
            ("mu1_grid".into(), list(&self.mu1_grid)),
            ("h_grid".into(), list(&self.h_grid)),
            ("sigma_low".into(), format!("{}", self.sigma_low)),
            ("sigma_high".into(), format!("{}", self.sigma_high)),
            ("replications".into(), format!("{}", self.replications)),
            ("alpha".into(), format!("{}", self.alpha)),
            ("seed".into(), format!("{}", self.seed)),
        ]
    }
}

/// Rejection frequencies of the adjusted test and the studentized test,
/// both right-sided, on identical data in every cell.
pub fn run_normal_location_study<E: Executor>(cfg: &NormalLocationConfig, exec: &E) -> Result<StudyResult> {
    let design = cfg.validate()?;
    let entry = lookup_bar_alpha(cfg.q1, cfg.q0, cfg.alpha)?;
    let set = AssignmentSet::full(design, DEFAULT_ENUMERATION_CAP)?;
    let q = design.q();
    let cells: Vec<(usize, f64)> = cfg.h_grid.iter().flat_map(|&h| cfg.mu1_grid.iter().map(move |&m| (h, m))).collect();

    let per_rep: Vec<Result<(Vec<[bool; 2]>, u64)>> = exec.map_indices(cfg.replications, |r| {
        let mut rng = RngStream::new(cfg.seed, r as u64);
        let z: Vec<f64> = (0..q).map(|_| rng.normal()).collect();
        let mut out = Vec::with_capacity(cells.len());
        for &(h, mu1) in &cells {
            let x: Vec<f64> = (0..q)
                .map(|k| {
                    let sigma = if k + 1 > q - h { cfg.sigma_high } else { cfg.sigma_low };
                    let mu = if k < cfg.q1 { mu1 } else { cfg.mu0 };
                    mu + sigma * z[k]
                })
                .collect();
            let est = ClusterEstimates::new(design, x)?;
            let ap = adjusted_test_with_entry(&est, &entry, Side::Right, 0.0, &set)?;
            let im = im_test(&est, cfg.alpha, Side::Right)?;
            out.push([ap.decision.is_reject(), im.decision.is_reject()]);
        }
        Ok((out, checksum(&z)))
    });

    let mut counts = vec![[0u64; 2]; cells.len()];
    let mut data_checksum = 0u64;
    for rep in per_rep {
        let (dec, sum) = rep?;
        data_checksum ^= sum;
        for (c, d) in counts.iter_mut().zip(dec) {
            c[0] += d[0] as u64;
            c[1] += d[1] as u64;
        }
    }
    let reps = cfg.replications as u64;
    let mut rows = Vec::with_capacity(2 * cells.len());
    for (&(h, mu1), c) in cells.iter().zip(&counts) {
        rows.push(RateRow { param: mu1, h, method: Method::AdjustedPermutation, rejections: c[0], replications: reps });
        rows.push(RateRow { param: mu1, h, method: Method::ClusterT, rejections: c[1], replications: reps });
    }
    Ok(StudyResult {
        study: "normal-location".into(),
        param_name: "mu1".into(),
        rows,
        config: cfg.describe(),
        data_checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    #[test]
    fn small_run_is_deterministic() {
        let cfg = NormalLocationConfig { mu1_grid: vec![0.0, 2.5], h_grid: vec![1, 6], replications: 300, seed: 11, ..Default::default() };
        let a = run_normal_location_study(&cfg, &Sequential).unwrap();
        let b = run_normal_location_study(&cfg, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 8);
        assert!(a.find(2.5, 1, Method::AdjustedPermutation).unwrap().rate() > 0.2);
    }

    #[test]
    fn infeasible_level_fails_before_simulating() {
        let cfg = NormalLocationConfig { q1: 4, q0: 4, replications: 1, ..Default::default() };
        assert!(matches!(run_normal_location_study(&cfg, &Sequential), Err(Error::Infeasible { .. })));
    }
}
