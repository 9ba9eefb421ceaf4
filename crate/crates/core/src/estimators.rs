//! Per-cluster estimates from raw observations.
//!
//! Each cluster is fitted on its own data, and the coefficient that carries
//! the treatment contrast becomes that cluster's entry of the estimate vector.
//! The test only needs these estimates to be approximately normal and
//! independent across clusters; that is a property of the study design and
//! is not checked here.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, least_squares, Matrix, Qr};
use crate::numerics::{phi, std_normal_pdf, std_normal_quantile};
use crate::permkit::Design;
use crate::permtest::ClusterEstimates;

/// One input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Cluster identifier.
    pub cluster_id: String,
    /// Cluster-level treatment flag.
    pub treated: bool,
    /// Outcome.
    pub outcome: f64,
    /// Post-intervention indicator, if the data are a panel.
    pub post: Option<bool>,
    /// Covariates.
    pub covariates: Vec<f64>,
}

/// Rows of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Identifier.
    pub id: String,
    /// Treatment flag.
    pub treated: bool,
    /// Outcomes.
    pub outcome: Vec<f64>,
    /// Post-intervention indicators, when present.
    pub post: Option<Vec<bool>>,
    /// Covariate rows.
    pub covariates: Vec<Vec<f64>>,
}

impl Cluster {
    /// Number of rows.
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    /// Whether the cluster has no rows.
    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }
}

/// Validated observations grouped by cluster, treated clusters first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDataset {
    clusters: Vec<Cluster>,
    q1: usize,
    covariate_names: Vec<String>,
    has_post: bool,
}

impl ClusterDataset {
    /// Groups rows by cluster and checks the invariants: treatment constant
    /// within a cluster, all rows with the same covariate count, `post`
    /// given on every row or on none, finite numbers, and at least one
    /// treated and one control cluster.
    ///
    /// Clusters are ordered treated first, each group by first appearance.
    pub fn from_observations(rows: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation(String::from("no observations")));
        }
        let k = covariate_names.len();
        let has_post = rows[0].post.is_some();
        let mut clusters: Vec<Cluster> = Vec::new();
        for (i, r) in rows.into_iter().enumerate() {
            let line = i + 1;
            if r.covariates.len() != k {
                return Err(Error::Validation(format!(
                    "row {line}: expected {k} covariates, found {}",
                    r.covariates.len()
                )));
            }
            if r.post.is_some() != has_post {
                return Err(Error::Validation(format!("row {line}: post indicator must be given on every row or none")));
            }
            if !r.outcome.is_finite() || r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {line}: non-finite value")));
            }
            match clusters.iter_mut().find(|c| c.id == r.cluster_id) {
                Some(c) => {
                    if c.treated != r.treated {
                        return Err(Error::Validation(format!(
                            "row {line}: treatment flag changes within cluster {}",
                            r.cluster_id
                        )));
                    }
                    c.outcome.push(r.outcome);
                    if let (Some(p), Some(v)) = (c.post.as_mut(), r.post) {
                        p.push(v);
                    }
                    c.covariates.push(r.covariates);
                }
                None => clusters.push(Cluster {
                    id: r.cluster_id,
                    treated: r.treated,
                    outcome: vec![r.outcome],
                    post: r.post.map(|v| vec![v]),
                    covariates: vec![r.covariates],
                }),
            }
        }
        let (mut treated, control): (Vec<Cluster>, Vec<Cluster>) = clusters.into_iter().partition(|c| c.treated);
        let q1 = treated.len();
        if q1 == 0 || control.is_empty() {
            return Err(Error::Validation(format!(
                "need at least one treated and one control cluster, found {q1} and {}",
                control.len()
            )));
        }
        treated.extend(control);
        Ok(Self { clusters: treated, q1, covariate_names, has_post })
    }

    /// Clusters, treated first.
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Treated/control counts.
    pub fn design(&self) -> Result<Design> {
        Design::new(self.q1, self.clusters.len() - self.q1)
    }

    /// Covariate names.
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Whether rows carry a post indicator.
    pub fn has_post(&self) -> bool {
        self.has_post
    }

    /// Total number of rows.
    pub fn n_rows(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }
}

/// Which coefficient becomes the cluster estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Intercept of outcome on `[1, covariates]`.
    Intercept,
    /// Coefficient on the post indicator in outcome on `[post, covariates, 1]`.
    DidSlope,
    /// Intercept of a binary-choice fit on `[1, covariates]`.
    BinaryChoice,
}

/// Link of a binary-choice model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `F(x) = 1 / (1 + exp(-x))`.
    Logistic,
    /// `F = Phi`.
    Probit,
}

impl Link {
    /// Distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Link::Logistic => 1.0 / (1.0 + libm::exp(-x)),
            Link::Probit => phi(x),
        }
    }

    /// Density.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Link::Logistic => {
                let f = self.cdf(x);
                f * (1.0 - f)
            }
            Link::Probit => std_normal_pdf(x),
        }
    }

    /// Quantile function.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain { what: "link quantile", value: p });
        }
        match self {
            Link::Logistic => Ok(libm::log(p / (1.0 - p))),
            Link::Probit => std_normal_quantile(p),
        }
    }
}

/// Estimator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    /// Model and target coefficient.
    pub mode: Mode,
    /// Link, used only by [`Mode::BinaryChoice`].
    pub link: Link,
}

impl EstimatorSpec {
    /// Linear model with the given mode.
    pub fn linear(mode: Mode) -> Self {
        Self { mode, link: Link::Logistic }
    }

    /// Binary-choice model with the given link.
    pub fn binary(link: Link) -> Self {
        Self { mode: Mode::BinaryChoice, link }
    }
}

fn cluster_design(c: &Cluster, mode: Mode) -> Result<Matrix> {
    let k = c.covariates.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(c.len() * (k + 2));
    match mode {
        Mode::Intercept | Mode::BinaryChoice => {
            for x in &c.covariates {
                data.push(1.0);
                data.extend_from_slice(x);
            }
            Matrix::from_row_major(c.len(), k + 1, data)
        }
        Mode::DidSlope => {
            let post = c
                .post
                .as_ref()
                .ok_or_else(|| Error::Validation(String::from("did-slope estimates need a post column")))?;
            for (x, p) in c.covariates.iter().zip(post) {
                data.push(if *p { 1.0 } else { 0.0 });
                data.extend_from_slice(x);
                data.push(1.0);
            }
            Matrix::from_row_major(c.len(), k + 2, data)
        }
    }
}

/// Least-squares fit of one cluster; the target coefficient comes first in
/// both linear modes.
pub fn cluster_ols(c: &Cluster, mode: Mode) -> Result<f64> {
    if mode == Mode::BinaryChoice {
        return Err(Error::Contract("binary-choice estimates come from binary_choice_cluster_estimates"));
    }
    let x = cluster_design(c, mode)?;
    Ok(least_squares(&x, &c.outcome, &c.id)?.coef[0])
}

/// Per-cluster least squares, one estimate per cluster, treated first.
pub fn per_cluster_ols(data: &ClusterDataset, spec: &EstimatorSpec) -> Result<ClusterEstimates> {
    let values = data.clusters.iter().map(|c| cluster_ols(c, spec.mode)).collect::<Result<Vec<_>>>()?;
    ClusterEstimates::new(data.design()?, values)
}

/// Convergence threshold on the max-norm of the averaged moment vector.
pub const MOMENT_TOL: f64 = 1e-10;
/// Newton iteration budget.
pub const MAX_NEWTON: usize = 100;

/// Z-estimate of one cluster's binary-choice model: intercept first, then
/// covariate coefficients.
pub fn binary_choice_fit(c: &Cluster, link: Link) -> Result<Vec<f64>> {
    if c.outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation(format!("cluster {}: binary-choice outcomes must be 0 or 1", c.id)));
    }
    let z = cluster_design(c, Mode::BinaryChoice)?;
    let (n, p) = (z.rows(), z.cols());
    if n < p {
        return Err(Error::InsufficientRows { cluster: c.id.clone(), rows: n, params: p });
    }
    let rank = Qr::new(&z).rank();
    if rank < p {
        return Err(Error::RankDeficient { cluster: c.id.clone(), rank, cols: p });
    }
    let rate = c.outcome.iter().sum::<f64>() / n as f64;
    if rate == 0.0 || rate == 1.0 {
        return Err(Error::Separation { cluster: c.id.clone() });
    }
    let mut b = vec![0.0; p];
    b[0] = link.quantile(rate)?;
    let moment = |b: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; p];
        for i in 0..n {
            let r = c.outcome[i] - link.cdf(dot(z.row(i), b));
            for (gj, zj) in g.iter_mut().zip(z.row(i)) {
                *gj += zj * r;
            }
        }
        g.iter().map(|v| v / n as f64).collect()
    };
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let mut g = moment(&b);
    for _ in 0..MAX_NEWTON {
        let size = norm(&g);
        if size < MOMENT_TOL {
            return Ok(b);
        }
        let mut h = Matrix::zeros(p, p);
        for i in 0..n {
            let w = link.pdf(dot(z.row(i), &b)) / n as f64;
            for a in 0..p {
                for d in 0..p {
                    h.set(a, d, h.get(a, d) + w * z.get(i, a) * z.get(i, d));
                }
            }
        }
        let qr = Qr::new(&h);
        if !qr.is_full_rank() {
            return Err(Error::Separation { cluster: c.id.clone() });
        }
        let step = qr.solve(&g)?;
        // Damped Newton: halve the step until the moment norm decreases.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = b.iter().zip(&step).map(|(bi, si)| bi + t * si).collect();
            let gt = moment(&trial);
            if norm(&gt) < size || norm(&gt) < MOMENT_TOL {
                b = trial;
                g = gt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || b.iter().any(|v| !v.is_finite() || libm::fabs(*v) > 1e6) {
            return Err(Error::Separation { cluster: c.id.clone() });
        }
    }
    let residual = norm(&g);
    if residual < MOMENT_TOL {
        Ok(b)
    } else {
        Err(Error::NoConvergence { cluster: c.id.clone(), residual })
    }
}

/// Per-cluster binary-choice intercepts, treated first.
pub fn binary_choice_cluster_estimates(data: &ClusterDataset, spec: &EstimatorSpec) -> Result<ClusterEstimates> {
    let values = data
        .clusters
        .iter()
        .map(|c| binary_choice_fit(c, spec.link).map(|b| b[0]))
        .collect::<Result<Vec<_>>>()?;
    ClusterEstimates::new(data.design()?, values)
}

/// Dispatches on `spec.mode`.
pub fn estimate(data: &ClusterDataset, spec: &EstimatorSpec) -> Result<ClusterEstimates> {
    match spec.mode {
        Mode::BinaryChoice => binary_choice_cluster_estimates(data, spec),
        _ => per_cluster_ols(data, spec),
    }
}
