//! Competing cluster-inference procedures.
//!
//! * [`im_test`]: studentized two-sample t-test on the cluster estimates,
//!   referred to Student t with `min(q1, q0) - 1` degrees of freedom.
//! * [`bch_test`]: pooled least squares with a cluster-robust standard error
//!   scaled by `(n - 1) q / ((n - d)(q - 1))`, referred to t with `q - 1`
//!   degrees of freedom.
//! * [`wild_cluster_bootstrap_test`]: the same pooled t statistic compared to
//!   its wild cluster bootstrap distribution with Rademacher weights and the
//!   null imposed.
//!
//! Two-sided versions use `1 - alpha/2` quantiles (the t-tests) or twice the
//! smaller one-sided bootstrap p-value.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ClusterDataset;
use crate::linalg::{dot, least_squares, Matrix, Qr};
use crate::numerics::{student_t_cdf, student_t_quantile};
use crate::permtest::{ClusterEstimates, Decision, Method, Side, TestOutcome};
use crate::rng::RngStream;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "alpha", value: alpha })
    }
}

/// Outcome of a t statistic referred to Student t with `df` degrees of freedom.
fn t_outcome(method: Method, t: f64, df: u32, alpha: f64, side: Side) -> Result<TestOutcome> {
    let upper = 1.0 - student_t_cdf(t, df)?;
    let lower = student_t_cdf(t, df)?;
    let two = (2.0 * upper.min(lower)).min(1.0);
    let (critical_value, critical_value_lower, reject) = match side {
        Side::Right => {
            let c = student_t_quantile(1.0 - alpha, df)?;
            (c, None, t > c)
        }
        Side::Left => {
            let c = student_t_quantile(1.0 - alpha, df)?;
            (c, None, -t > c)
        }
        Side::TwoSided => {
            let c = student_t_quantile(1.0 - alpha / 2.0, df)?;
            (c, Some(-c), libm::fabs(t) > c)
        }
    };
    Ok(TestOutcome {
        method,
        statistic: t,
        critical_value,
        critical_value_lower,
        p_value_right: upper,
        p_value_left: lower,
        p_value_two_sided: two,
        decision: if reject { Decision::Reject } else { Decision::Retain },
        side,
        alpha,
        bar_alpha_used: None,
        order_index: None,
        n_assignments: None,
        assignment_source: None,
        seed: None,
        lambda: 0.0,
        degenerate: false,
    })
}

/// Studentized difference of group means:
/// `(m1 - m0) / sqrt(s1^2 / q1 + s0^2 / q0)` with sample variances `s^2`.
pub fn im_statistic(x: &ClusterEstimates) -> Result<f64> {
    let (t, c) = (x.treated(), x.control());
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::Contract("the studentized test needs at least two clusters per group"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var_of_mean = |v: &[f64], m: f64| {
        let n = v.len() as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n * (n - 1.0))
    };
    let (m1, m0) = (mean(t), mean(c));
    let denom = libm::sqrt(var_of_mean(t, m1) + var_of_mean(c, m0));
    if denom == 0.0 {
        return Err(Error::Degenerate("both groups of estimates are constant"));
    }
    Ok((m1 - m0) / denom)
}

/// Studentized cluster t-test with `min(q1, q0) - 1` degrees of freedom.
pub fn im_test(x: &ClusterEstimates, alpha: f64, side: Side) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let t = im_statistic(x)?;
    let df = (x.design().q1().min(x.design().q0()) - 1) as u32;
    t_outcome(Method::ClusterT, t, df, alpha, side)
}

/// Pooled regression design with a cluster label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDesign {
    x: Matrix,
    y: Vec<f64>,
    cluster: Vec<usize>,
    n_clusters: usize,
    target: usize,
    columns: Vec<String>,
}

impl PooledDesign {
    /// Validates shapes; `cluster[i]` must lie in `0..n_clusters` and every
    /// cluster must have at least one row.
    pub fn new(x: Matrix, y: Vec<f64>, cluster: Vec<usize>, target: usize, columns: Vec<String>) -> Result<Self> {
        if y.len() != x.rows() || cluster.len() != x.rows() {
            return Err(Error::Shape { expected: x.rows(), found: y.len().min(cluster.len()) });
        }
        if columns.len() != x.cols() {
            return Err(Error::Shape { expected: x.cols(), found: columns.len() });
        }
        if target >= x.cols() {
            return Err(Error::Contract("target column out of range"));
        }
        let n_clusters = cluster.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_clusters];
        for &g in &cluster {
            seen[g] = true;
        }
        if n_clusters < 2 || seen.iter().any(|s| !s) {
            return Err(Error::Validation(String::from("pooled design needs at least two nonempty clusters")));
        }
        Ok(Self { x, y, cluster, n_clusters, target, columns })
    }

    /// Two-way fixed-effects difference-in-differences design: one dummy per
    /// cluster, the post indicator, post times treated (the target) and the
    /// covariates.
    pub fn did_two_way(data: &ClusterDataset) -> Result<Self> {
        if !data.has_post() {
            return Err(Error::Validation(String::from("the pooled difference-in-differences design needs a post column")));
        }
        let q = data.clusters().len();
        let k = data.covariate_names().len();
        let d = q + 2 + k;
        let mut x = Vec::with_capacity(data.n_rows() * d);
        let mut y = Vec::with_capacity(data.n_rows());
        let mut cluster = Vec::with_capacity(data.n_rows());
        for (g, c) in data.clusters().iter().enumerate() {
            let post = c.post.as_ref().expect("checked above");
            for i in 0..c.len() {
                let p = if post[i] { 1.0 } else { 0.0 };
                x.extend((0..q).map(|h| if h == g { 1.0 } else { 0.0 }));
                x.push(p);
                x.push(if c.treated { p } else { 0.0 });
                x.extend_from_slice(&c.covariates[i]);
                y.push(c.outcome[i]);
                cluster.push(g);
            }
        }
        let mut columns: Vec<String> = data.clusters().iter().map(|c| format!("fe[{}]", c.id)).collect();
        columns.push(String::from("post"));
        columns.push(String::from("post:treated"));
        columns.extend(data.covariate_names().iter().cloned());
        Self::new(Matrix::from_row_major(y.len(), d, x)?, y, cluster, q + 1, columns)
    }

    /// Cross-sectional design `[1, treated, covariates]`, targeting the
    /// treatment dummy.
    pub fn treatment_dummy(data: &ClusterDataset) -> Result<Self> {
        let k = data.covariate_names().len();
        let d = 2 + k;
        let mut x = Vec::with_capacity(data.n_rows() * d);
        let mut y = Vec::with_capacity(data.n_rows());
        let mut cluster = Vec::with_capacity(data.n_rows());
        for (g, c) in data.clusters().iter().enumerate() {
            for i in 0..c.len() {
                x.push(1.0);
                x.push(if c.treated { 1.0 } else { 0.0 });
                x.extend_from_slice(&c.covariates[i]);
                y.push(c.outcome[i]);
                cluster.push(g);
            }
        }
        let mut columns = vec![String::from("const"), String::from("treated")];
        columns.extend(data.covariate_names().iter().cloned());
        Self::new(Matrix::from_row_major(y.len(), d, x)?, y, cluster, 1, columns)
    }

    /// Same design with another outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.cluster.clone(), self.target, self.columns.clone())
    }

    /// Column names.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Index of the target column.
    pub fn target(&self) -> usize {
        self.target
    }

    /// Rows `n`.
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Clusters `q`.
    pub fn q(&self) -> usize {
        self.n_clusters
    }

    /// Regressors `d`, every column of the design.
    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Regressor matrix.
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    /// Outcome.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Cluster label of each row.
    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }
}

/// `(n - 1) q / ((n - d)(q - 1))`.
pub fn small_sample_adjustment(n: usize, q: usize, d: usize) -> Result<f64> {
    if n <= d || q < 2 {
        return Err(Error::Contract("adjustment needs n > d and q >= 2"));
    }
    Ok(((n - 1) * q) as f64 / ((n - d) * (q - 1)) as f64)
}

/// Target coefficient and its cluster-robust standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustFit {
    /// Target coefficient.
    pub coefficient: f64,
    /// Adjusted cluster-robust standard error.
    pub se: f64,
    /// Small-sample factor applied to the variance.
    pub adjustment: f64,
    /// Rows.
    pub n: usize,
    /// Clusters.
    pub q: usize,
    /// Regressors.
    pub d: usize,
}

/// Row of `(X'X)^{-1}` for the target, times each row of `X`: the weights
/// that turn residuals into the target coefficient's score.
fn target_weights(design: &PooledDesign, inv: &Matrix) -> Vec<f64> {
    let a: Vec<f64> = (0..design.d()).map(|j| inv.get(design.target, j)).collect();
    (0..design.n()).map(|i| dot(design.x.row(i), &a)).collect()
}

fn factorize(design: &PooledDesign) -> Result<Matrix> {
    if design.n() <= design.d() {
        return Err(Error::InsufficientRows { cluster: String::from("pooled"), rows: design.n(), params: design.d() });
    }
    let qr = Qr::new(&design.x);
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient { cluster: String::from("pooled"), rank: qr.rank(), cols: design.d() });
    }
    qr.inverse_gram()
}

/// Pooled least squares with the sandwich variance
/// `adj (X'X)^{-1} (sum_g X_g' e_g e_g' X_g) (X'X)^{-1}`.
pub fn cluster_robust_ols(design: &PooledDesign) -> Result<RobustFit> {
    let fit = least_squares(&design.x, &design.y, "pooled")?;
    let inv = factorize(design)?;
    let w = target_weights(design, &inv);
    let mut score = vec![0.0; design.q()];
    for i in 0..design.n() {
        score[design.cluster[i]] += w[i] * fit.residuals[i];
    }
    let adjustment = small_sample_adjustment(design.n(), design.q(), design.d())?;
    let se = libm::sqrt(adjustment * score.iter().map(|s| s * s).sum::<f64>());
    Ok(RobustFit { coefficient: fit.coef[design.target], se, adjustment, n: design.n(), q: design.q(), d: design.d() })
}

fn robust_t(fit: &RobustFit) -> Result<f64> {
    if !(fit.se > 0.0) {
        return Err(Error::Degenerate("cluster-robust standard error is zero"));
    }
    Ok(fit.coefficient / fit.se)
}

/// Pooled cluster-robust t-test with `q - 1` degrees of freedom.
pub fn bch_test(design: &PooledDesign, alpha: f64, side: Side) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let fit = cluster_robust_ols(design)?;
    let t = robust_t(&fit)?;
    t_outcome(Method::ClusterRobustT, t, (design.q() - 1) as u32, alpha, side)
}

/// Precomputed wild cluster bootstrap with the null imposed.
///
/// Bootstrap outcomes are `y* = y_r + w_g e_g` with `y_r`, `e` the fitted
/// values and residuals of the regression without the target column and
/// `w_g = +-1` one sign per cluster. Because `y_r` lies in the column space
/// of the full design, the bootstrap coefficient and every cluster score are
/// linear in the signs, so each draw costs `O(q^2)`.
#[derive(Debug, Clone)]
pub struct WildBootstrap {
    // target coefficient per unit sign of each cluster
    b: Vec<f64>,
    // score of cluster g per unit sign of cluster h, row-major q x q
    c: Vec<f64>,
    q: usize,
    adjustment: f64,
    observed: RobustFit,
}

impl WildBootstrap {
    /// Fits the unrestricted and restricted regressions.
    pub fn new(design: &PooledDesign) -> Result<Self> {
        let observed = cluster_robust_ols(design)?;
        let inv = factorize(design)?;
        let (n, d, q) = (design.n(), design.d(), design.q());
        let keep: Vec<usize> = (0..d).filter(|&j| j != design.target).collect();
        let mut xr = Vec::with_capacity(n * keep.len());
        for i in 0..n {
            let row = design.x.row(i);
            xr.extend(keep.iter().map(|&j| row[j]));
        }
        let restricted = least_squares(&Matrix::from_row_major(n, keep.len(), xr)?, &design.y, "pooled")?;
        let e = restricted.residuals;
        let w = target_weights(design, &inv);
        // b_g = sum_{i in g} w_i e_i ; u_h = (X'X)^{-1} X_h' e_h ; G_g = sum_{i in g} w_i x_i
        let mut b = vec![0.0; q];
        let mut xe = vec![vec![0.0; d]; q];
        let mut gg = vec![vec![0.0; d]; q];
        for i in 0..n {
            let g = design.cluster[i];
            b[g] += w[i] * e[i];
            for (j, xij) in design.x.row(i).iter().enumerate() {
                xe[g][j] += xij * e[i];
                gg[g][j] += w[i] * xij;
            }
        }
        let u: Vec<Vec<f64>> = xe.iter().map(|v| inv.mul_vec(v)).collect();
        let mut c = vec![0.0; q * q];
        for g in 0..q {
            for h in 0..q {
                c[g * q + h] = if g == h { b[g] } else { 0.0 } - dot(&gg[g], &u[h]);
            }
        }
        Ok(Self { b, c, q, adjustment: observed.adjustment, observed })
    }

    /// Observed fit.
    pub fn observed(&self) -> &RobustFit {
        &self.observed
    }

    /// Observed t statistic.
    pub fn observed_t(&self) -> Result<f64> {
        robust_t(&self.observed)
    }

    /// Number of clusters.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Bootstrap t statistic for one sign vector; `NaN` if its standard
    /// error vanishes.
    pub fn t_star(&self, signs: &[f64]) -> f64 {
        let q = self.q;
        let coef = dot(&self.b, signs);
        let ss: f64 = (0..q).map(|g| dot(&self.c[g * q..(g + 1) * q], signs)).map(|s| s * s).sum();
        let se = libm::sqrt(self.adjustment * ss);
        if se > 0.0 {
            coef / se
        } else {
            f64::NAN
        }
    }
}

/// Wild cluster bootstrap test with `b` Rademacher draws.
///
/// One-sided p-values are `(1 + #{t*_b >= t}) / (b + 1)` (right) and
/// `(1 + #{t*_b <= t}) / (b + 1)` (left). The test rejects when the p-value
/// for the requested side is at most `alpha`.
pub fn wild_cluster_bootstrap_test(
    design: &PooledDesign,
    alpha: f64,
    side: Side,
    b: usize,
    rng: &mut RngStream,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if b == 0 {
        return Err(Error::Contract("bootstrap needs at least one draw"));
    }
    let wb = WildBootstrap::new(design)?;
    let t = wb.observed_t()?;
    let mut signs = vec![0.0; wb.q()];
    let (mut up, mut down) = (0usize, 0usize);
    for _ in 0..b {
        for s in signs.iter_mut() {
            *s = rng.rademacher();
        }
        let ts = wb.t_star(&signs);
        if ts >= t {
            up += 1;
        }
        if ts <= t {
            down += 1;
        }
    }
    let denom = (b + 1) as f64;
    let p_right = (1 + up) as f64 / denom;
    let p_left = (1 + down) as f64 / denom;
    let p_two = (2.0 * p_right.min(p_left)).min(1.0);
    let p = match side {
        Side::Right => p_right,
        Side::Left => p_left,
        Side::TwoSided => p_two,
    };
    Ok(TestOutcome {
        method: Method::WildClusterBootstrap,
        statistic: t,
        critical_value: f64::NAN,
        critical_value_lower: None,
        p_value_right: p_right,
        p_value_left: p_left,
        p_value_two_sided: p_two,
        decision: if p <= alpha { Decision::Reject } else { Decision::Retain },
        side,
        alpha,
        bar_alpha_used: None,
        order_index: None,
        n_assignments: Some(b as u64),
        assignment_source: None,
        seed: Some(rng.seed()),
        lambda: 0.0,
        degenerate: false,
    })
}
