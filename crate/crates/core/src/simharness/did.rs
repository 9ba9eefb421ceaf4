//! Difference in differences with AR(1) errors.
//!
//! ```text
//! Y_tk = theta0 I_t + delta I_t D_k + b1 X1_tk + b2 X2_tk + b3 X3_tk + zeta + U_tk
//! U_tk = rho U_{t-1,k} + V_tk,     X1_tk = gamma I_t D_k + W_tk
//! ```
//!
//! with `(X2, X3, V, W) ~ N(0, sigma_k^2 I)`, `I_t = 1{t > n0}` and the last
//! `h` clusters at `sigma_high`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ar1_simulate, checksum, list, RateRow, StudyResult};
use crate::error::{Error, Result};
use crate::estimators::{per_cluster_ols, ClusterDataset, EstimatorSpec, Mode, Observation};
use crate::exec::Executor;
use crate::permkit::{AssignmentSet, Design, DEFAULT_ENUMERATION_CAP};
use crate::permtest::{adjusted_test_with_entry, lookup_bar_alpha, Method, Side};
use crate::rivals::{bch_test, im_test, wild_cluster_bootstrap_test, PooledDesign};
use crate::rng::RngStream;

const BOOTSTRAP_STREAMS: u64 = 1 << 62;

/// Settings of the difference-in-differences study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidConfig {
    /// Treated clusters.
    pub q1: usize,
    /// Control clusters.
    pub q0: usize,
    /// Pre-intervention periods.
    pub n0: usize,
    /// Post-intervention periods.
    pub n1: usize,
    /// Post-period effect common to all clusters.
    pub theta0: f64,
    /// Coefficient on `X1`.
    pub beta1: f64,
    /// Coefficient on `X2`.
    pub beta2: f64,
    /// Coefficient on `X3`.
    pub beta3: f64,
    /// Cluster fixed effect.
    pub zeta: f64,
    /// Error autocorrelation.
    pub rho: f64,
    /// Loading of `X1` on the treatment.
    pub gamma: f64,
    /// Treatment effects to evaluate.
    pub delta_grid: Vec<f64>,
    /// Numbers of high-variance clusters to evaluate.
    pub h_grid: Vec<usize>,
    /// Ordinary standard deviation.
    pub sigma_low: f64,
    /// High standard deviation.
    pub sigma_high: f64,
    /// Discarded AR(1) start-up periods.
    pub burn_in: usize,
    /// Replications per cell.
    pub replications: usize,
    /// Bootstrap draws.
    pub bootstrap_b: usize,
    /// One-sided level.
    pub alpha: f64,
    /// Master seed.
    pub seed: u64,
}

impl Default for DidConfig {
    fn default() -> Self {
        Self {
            q1: 6,
            q0: 6,
            n0: 10,
            n1: 10,
            theta0: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            beta3: 1.0,
            zeta: 1.0,
            rho: 0.5,
            gamma: 0.8,
            delta_grid: vec![0.0, 1.0, 2.0, 3.0],
            h_grid: vec![1, 3, 5, 7],
            sigma_low: 1.0,
            sigma_high: 20.0,
            burn_in: 500,
            replications: 10_000,
            bootstrap_b: 199,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl DidConfig {
    fn validate(&self) -> Result<Design> {
        let design = Design::new(self.q1, self.q0)?;
        if self.replications == 0 || self.bootstrap_b == 0 {
            return Err(Error::Contract("replications and bootstrap draws must be positive"));
        }
        if self.n0 == 0 || self.n1 == 0 || self.n0 + self.n1 < 6 {
            return Err(Error::Contract("each cluster needs pre and post periods and at least six in total"));
        }
        if self.delta_grid.is_empty() || self.h_grid.is_empty() {
            return Err(Error::Contract("grids must be nonempty"));
        }
        if let Some(&h) = self.h_grid.iter().find(|&&h| h > design.q()) {
            return Err(Error::Domain { what: "h", value: h as f64 });
        }
        if !(libm::fabs(self.rho) < 1.0) {
            return Err(Error::Domain { what: "autoregressive coefficient", value: self.rho });
        }
        for &s in &[self.sigma_low, self.sigma_high] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain { what: "standard deviation", value: s });
            }
        }
        Ok(design)
    }

    /// Key/value description for output headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("q1".into(), format!("{}", self.q1)),
            ("q0".into(), format!("{}", self.q0)),
            ("n0".into(), format!("{}", self.n0)),
            ("n1".into(), format!("{}", self.n1)),
            ("theta0".into(), format!("{}", self.theta0)),
            ("beta1".into(), format!("{}", self.beta1)),
            ("beta2".into(), format!("{}", self.beta2)),
            ("beta3".into(), format!("{}", self.beta3)),
            ("zeta".into(), format!("{}", self.zeta)),
            ("rho".into(), format!("{}", self.rho)),
            ("gamma".into(), format!("{}", self.gamma)),
            ("delta_grid".into(), list(&self.delta_grid)),
            ("h_grid".into(), list(&self.h_grid)),
            ("sigma_low".into(), format!("{}", self.sigma_low)),
            ("sigma_high".into(), format!("{}", self.sigma_high)),
            ("burn_in".into(), format!("{}", self.burn_in)),
            ("replications".into(), format!("{}", self.replications)),
            ("bootstrap_b".into(), format!("{}", self.bootstrap_b)),
            ("alpha".into(), format!("{}", self.alpha)),
            ("seed".into(), format!("{}", self.seed)),
        ]
    }

    fn periods(&self) -> usize {
        self.n0 + self.n1
    }
}

/// Standard normal draws of one replication, shared by every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DidData {
    // per cluster: AR(1) path of unit-variance innovations after burn-in
    u: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    x3: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl DidData {
    /// Draws replication `rep` from stream `(cfg.seed, rep)`.
    pub fn generate(cfg: &DidConfig, rep: u64) -> Result<Self> {
        let mut rng = RngStream::new(cfg.seed, rep);
        let q = cfg.q1 + cfg.q0;
        let n = cfg.periods();
        let mut data = Self { u: Vec::with_capacity(q), x2: Vec::with_capacity(q), x3: Vec::with_capacity(q), w: Vec::with_capacity(q) };
        for _ in 0..q {
            let v: Vec<f64> = (0..cfg.burn_in + n).map(|_| rng.normal()).collect();
            data.u.push(ar1_simulate(cfg.rho, &v, cfg.burn_in)?);
            data.x2.push((0..n).map(|_| rng.normal()).collect());
            data.x3.push((0..n).map(|_| rng.normal()).collect());
            data.w.push((0..n).map(|_| rng.normal()).collect());
        }
        Ok(data)
    }

    /// Observations for `h` high-variance clusters and effect `delta`, with
    /// covariates `x1, x2, x3`.
    pub fn dataset(&self, cfg: &DidConfig, h: usize, delta: f64) -> Result<ClusterDataset> {
        let q = cfg.q1 + cfg.q0;
        let mut rows = Vec::with_capacity(q * cfg.periods());
        for k in 0..q {
            let sigma = if k + 1 > q - h { cfg.sigma_high } else { cfg.sigma_low };
            let treated = k < cfg.q1;
            let d = if treated { 1.0 } else { 0.0 };
            for t in 0..cfg.periods() {
                let post = t >= cfg.n0;
                let i = if post { 1.0 } else { 0.0 };
                let x1 = cfg.gamma * i * d + sigma * self.w[k][t];
                let x2 = sigma * self.x2[k][t];
                let x3 = sigma * self.x3[k][t];
                let y = cfg.theta0 * i
                    + delta * i * d
                    + cfg.beta1 * x1
                    + cfg.beta2 * x2
                    + cfg.beta3 * x3
                    + cfg.zeta
                    + sigma * self.u[k][t];
                rows.push(Observation {
                    cluster_id: format!("{}", k + 1),
                    treated,
                    outcome: y,
                    post: Some(post),
                    covariates: vec![x1, x2, x3],
                });
            }
        }
        ClusterDataset::from_observations(rows, vec!["x1".into(), "x2".into(), "x3".into()])
    }
}

/// Dataset of one replication and cell.
pub fn did_replication(cfg: &DidConfig, rep: u64, h: usize, delta: f64) -> Result<ClusterDataset> {
    cfg.validate()?;
    DidData::generate(cfg, rep)?.dataset(cfg, h, delta)
}

const METHODS: [Method; 4] =
    [Method::AdjustedPermutation, Method::ClusterT, Method::ClusterRobustT, Method::WildClusterBootstrap];

/// Rejection frequencies of the four right-sided tests on identical data.
///
/// The per-cluster estimate is the post-indicator coefficient of each
/// cluster's regression on `[post, x1, x2, x3, 1]`. The pooled tests use
/// cluster dummies, `post`, `post:treated` (the target) and `x1..x3`; the
/// column list is recorded in the result's configuration.
pub fn run_did_study<E: Executor>(cfg: &DidConfig, exec: &E) -> Result<StudyResult> {
    let design = cfg.validate()?;
    let entry = lookup_bar_alpha(cfg.q1, cfg.q0, cfg.alpha)?;
    let set = AssignmentSet::full(design, DEFAULT_ENUMERATION_CAP)?;
    let cells: Vec<(usize, f64)> = cfg.h_grid.iter().flat_map(|&h| cfg.delta_grid.iter().map(move |&d| (h, d))).collect();
    let spec = EstimatorSpec::linear(Mode::DidSlope);

    let per_rep: Vec<Result<(Vec<[bool; 4]>, u64)>> = exec.map_indices(cfg.replications, |r| {
        let base = DidData::generate(cfg, r as u64)?;
        let mut out = Vec::with_capacity(cells.len());
        let mut sum = 0u64;
        for (ci, &(h, delta)) in cells.iter().enumerate() {
            let data = base.dataset(cfg, h, delta)?;
            let seen_by_cluster_fits = checksum(data.clusters().iter().flat_map(|c| c.outcome.iter()));
            let est = per_cluster_ols(&data, &spec)?;
            let ap = adjusted_test_with_entry(&est, &entry, Side::Right, 0.0, &set)?;
            let im = im_test(&est, cfg.alpha, Side::Right)?;
            let pooled = PooledDesign::did_two_way(&data)?;
            if checksum(pooled.y()) != seen_by_cluster_fits {
                return Err(Error::Contract("pooled and per-cluster fits saw different data"));
            }
            let bch = bch_test(&pooled, cfg.alpha, Side::Right)?;
            let mut boot_rng = RngStream::new(cfg.seed, BOOTSTRAP_STREAMS | ((r as u64) << 16) | ci as u64);
            let wcb = wild_cluster_bootstrap_test(&pooled, cfg.alpha, Side::Right, cfg.bootstrap_b, &mut boot_rng)?;
            out.push([
                ap.decision.is_reject(),
                im.decision.is_reject(),
                bch.decision.is_reject(),
                wcb.decision.is_reject(),
            ]);
            sum = sum.rotate_left(7) ^ seen_by_cluster_fits;
        }
        Ok((out, sum))
    });

    let mut counts = vec![[0u64; 4]; cells.len()];
    let mut data_checksum = 0u64;
    for rep in per_rep {
        let (dec, sum) = rep?;
        data_checksum ^= sum;
        for (c, d) in counts.iter_mut().zip(dec) {
            for m in 0..4 {
                c[m] += d[m] as u64;
            }
        }
    }
    let reps = cfg.replications as u64;
    let mut rows = Vec::with_capacity(4 * cells.len());
    for (&(h, delta), c) in cells.iter().zip(&counts) {
        for (m, &method) in METHODS.iter().enumerate() {
            rows.push(RateRow { param: delta, h, method, rejections: c[m], replications: reps });
        }
    }
    let mut config = cfg.describe();
    let columns = PooledDesign::did_two_way(&DidData::generate(cfg, 0)?.dataset(cfg, 0, 0.0)?)?.columns().join(";");
    config.push(("pooled_columns".into(), columns));
    config.push(("cluster_regressors".into(), String::from("post;x1;x2;x3;const")));
    Ok(StudyResult { study: "did".into(), param_name: "delta".into(), rows, config, data_checksum })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    #[test]
    fn dataset_shape() {
        let cfg = DidConfig::default();
        let d = did_replication(&cfg, 3, 7, 2.0).unwrap();
        assert_eq!(d.clusters().len(), 12);
        assert_eq!(d.n_rows(), 240);
        assert_eq!(d.design().unwrap(), Design::new(6, 6).unwrap());
        let pooled = PooledDesign::did_two_way(&d).unwrap();
        assert_eq!(pooled.d(), 17);
    }

    #[test]
    fn small_study_is_deterministic() {
        let cfg = DidConfig { replications: 20, h_grid: vec![1], delta_grid: vec![0.0, 2.0], bootstrap_b: 19, seed: 4, ..Default::default() };
        let a = run_did_study(&cfg, &Sequential).unwrap();
        let b = run_did_study(&cfg, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 8);
        assert!(a.config.iter().any(|(k, v)| k == "pooled_columns" && v.contains("post:treated")));
    }
}
