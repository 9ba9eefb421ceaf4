//! The level-adjusted permutation test.
//!
//! Given per-cluster estimates ordered treated-first, the test compares the
//! difference of group means `T(x)` with the permutation distribution of `T`
//! over relabelings of which clusters count as treated. Because clusters may
//! have arbitrarily different variances the permutation distribution is not
//! an exact null distribution, so the critical value is taken at an adjusted
//! level `bar_alpha <= alpha` chosen so that the worst-case size over all
//! variance configurations stays at or below `alpha`.

mod table;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permkit::{Assignment, AssignmentSet, AssignmentSource, Design};

pub use table::{cells as table_cells, lookup_bar_alpha, order_index_from_printed, TableCell, STAR, TABULATED_ALPHAS};

/// Per-cluster estimates, treated clusters first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEstimates {
    design: Design,
    values: Vec<f64>,
}

impl ClusterEstimates {
    /// `values[..q1]` are treated clusters, `values[q1..]` controls.
    pub fn new(design: Design, values: Vec<f64>) -> Result<Self> {
        if values.len() != design.q() {
            return Err(Error::Shape { expected: design.q(), found: values.len() });
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain { what: "cluster estimate", value: bad });
        }
        Ok(Self { design, values })
    }

    /// Builds from separate treated and control slices.
    pub fn from_groups(treated: &[f64], control: &[f64]) -> Result<Self> {
        let design = Design::new(treated.len(), control.len())?;
        let mut values = Vec::with_capacity(design.q());
        values.extend_from_slice(treated);
        values.extend_from_slice(control);
        Self::new(design, values)
    }

    /// The design.
    pub fn design(&self) -> &Design {
        &self.design
    }

    /// All estimates.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Treated-group estimates.
    pub fn treated(&self) -> &[f64] {
        &self.values[..self.design.q1()]
    }

    /// Control-group estimates.
    pub fn control(&self) -> &[f64] {
        &self.values[self.design.q1()..]
    }

    /// Subtracts `lambda` from every treated entry.
    pub fn shifted(&self, lambda: f64) -> Result<Self> {
        let q1 = self.design.q1();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| if k < q1 { v - lambda } else { *v })
            .collect();
        Self::new(self.design, values)
    }

    /// Every entry negated.
    pub fn negated(&self) -> Self {
        Self { design: self.design, values: self.values.iter().map(|v| -v).collect() }
    }

    /// True when all entries are identical.
    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }
}

/// `T` evaluated at the relabeling `a`: mean of the entries it sends to the
/// treated group minus the mean of the rest. Entries are summed in position
/// order, so the identity reproduces [`comparison_of_means`] bit for bit.
pub fn permuted_statistic(x: &ClusterEstimates, a: &Assignment) -> f64 {
    let d = x.design();
    let v = x.values();
    let s1: f64 = a.treated().map(|k| v[k]).sum();
    let s0: f64 = a.control(d).map(|k| v[k]).sum();
    s1 / d.q1() as f64 - s0 / d.q0() as f64
}

/// Difference between the treated and control means.
pub fn comparison_of_means(x: &ClusterEstimates) -> f64 {
    permuted_statistic(x, &x.design().identity())
}

/// Sorted permutation distribution of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermDistribution {
    sorted_values: Vec<f64>,
    source: AssignmentSource,
}

impl PermDistribution {
    /// Values in nondecreasing order.
    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Provenance of the assignments.
    pub fn source(&self) -> AssignmentSource {
        self.source
    }

    /// Number of values.
    pub fn len(&self) -> usize {
        self.sorted_values.len()
    }

    /// Whether the distribution is empty (never, for constructed values).
    pub fn is_empty(&self) -> bool {
        self.sorted_values.is_empty()
    }

    /// The `j`-th smallest value, 1-based.
    pub fn order_statistic(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.len() {
            return Err(Error::Domain { what: "order statistic index", value: j as f64 });
        }
        Ok(self.sorted_values[j - 1])
    }
}

/// Evaluates `T` under every assignment in `set` and sorts the results.
pub fn permutation_distribution(x: &ClusterEstimates, set: &AssignmentSet) -> Result<PermDistribution> {
    check_design(x, set)?;
    let mut sorted_values: Vec<f64> = set.assignments().iter().map(|a| permuted_statistic(x, a)).collect();
    sorted_values.sort_unstable_by(f64::total_cmp);
    Ok(PermDistribution { sorted_values, source: set.source() })
}

fn check_design(x: &ClusterEstimates, set: &AssignmentSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Contract("assignment set must be nonempty"));
    }
    if x.design() != set.design() {
        return Err(Error::Shape { expected: set.design().q(), found: x.design().q() });
    }
    Ok(())
}

/// `ceil((1 - p) * n)` clamped to `1..=n`.
///
/// A relative slack of 1e-12 absorbs rounding when `(1 - p) * n` is meant to
/// be an integer.
pub fn order_index_for_level(n: u64, p: f64) -> u64 {
    let x = (1.0 - p) * n as f64;
    let j = libm::ceil(x - 1e-12 * n as f64) as i128;
    j.clamp(1, n as i128) as u64
}

/// Critical value `T^p`: the `ceil((1 - p) N)`-th smallest permutation value.
pub fn critical_value(dist: &PermDistribution, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain { what: "critical value level", value: p });
    }
    let j = order_index_for_level(dist.len() as u64, p);
    dist.order_statistic(j as usize)
}

/// Unadjusted permutation p-value: share of assignments with `T(gx) >= T(x)`.
///
/// Requires the identity to be in `set`, which guarantees a value of at
/// least `1/N`.
pub fn p_value(x: &ClusterEstimates, set: &AssignmentSet) -> Result<f64> {
    check_design(x, set)?;
    if !set.contains_identity() {
        return Err(Error::Contract("the identity assignment must be part of the assignment set"));
    }
    let t = comparison_of_means(x);
    let hits = set.assignments().iter().filter(|a| permuted_statistic(x, a) >= t).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Worst-case probability over all means and variances that `T(X)` exceeds
/// the second-largest permutation value when the entries are independent
/// normals with a common mean:
/// `2^-(q1 ∧ q0) + 2^-((q1 ∨ q0) + 1) - 2^-(q1 + q0)`.
pub fn size_bound(q1: usize, q0: usize) -> f64 {
    let lo = q1.min(q0) as i32;
    let hi = q1.max(q0) as i32;
    libm::scalbn(1.0, -lo) + libm::scalbn(1.0, -(hi + 1)) - libm::scalbn(1.0, -(lo + hi))
}

/// Whether every treated entry exceeds every control entry, which for
/// continuous data is exactly the event that `T(x)` is the largest
/// permutation value.
pub fn max_characterization(x: &ClusterEstimates) -> bool {
    let min_t = x.treated().iter().copied().fold(f64::INFINITY, f64::min);
    let max_c = x.control().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    min_t > max_c
}

/// Direction of the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Treated mean exceeds the control mean.
    Right,
    /// Treated mean falls short of the control mean.
    Left,
    /// Either direction.
    TwoSided,
}

/// Test decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The null is rejected.
    Reject,
    /// The null is retained.
    Retain,
}

impl Decision {
    fn from_bool(reject: bool) -> Self {
        if reject {
            Decision::Reject
        } else {
            Decision::Retain
        }
    }

    /// Whether this is a rejection.
    pub fn is_reject(&self) -> bool {
        matches!(self, Decision::Reject)
    }
}

/// Which procedure produced a [`TestOutcome`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Level-adjusted permutation test.
    AdjustedPermutation,
    /// Studentized t-test on cluster estimates.
    ClusterT,
    /// Pooled regression with cluster-robust standard errors.
    ClusterRobustT,
    /// Wild cluster bootstrap with Rademacher weights.
    WildClusterBootstrap,
}

/// Whether an adjusted level came from the embedded table or a calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    /// Embedded table.
    Tabulated,
    /// Monte-Carlo calibration.
    Calibrated,
}

/// An adjusted level and the permutation order statistic it selects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    /// Treated clusters.
    pub q1: usize,
    /// Control clusters.
    pub q0: usize,
    /// One-sided nominal level.
    pub alpha: f64,
    /// Adjusted level.
    pub bar_alpha: f64,
    /// `ceil((1 - bar_alpha) N)`: the critical value is this order statistic.
    pub order_index: u64,
    /// `N = C(q1 + q0, q1)`.
    pub n_assignments: u64,
    /// Provenance.
    pub source: EntrySource,
    /// Only the second-largest order statistic controls size.
    pub starred: bool,
}

impl AlphaEntry {
    /// The same entry for the transposed design.
    pub fn transposed(&self) -> Self {
        Self { q1: self.q0, q0: self.q1, ..*self }
    }
}

/// Result of a test.
///
/// For the permutation test `critical_value` is on the scale of the statistic
/// being compared: `T(x)` for right-sided and two-sided tests, `T(-x)` for
/// left-sided tests. Two-sided outcomes also carry the lower threshold on the
/// `T(x)` scale in `critical_value_lower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Producing procedure.
    pub method: Method,
    /// Observed statistic.
    pub statistic: f64,
    /// Critical value (see type docs).
    pub critical_value: f64,
    /// Lower critical value for two-sided tests.
    pub critical_value_lower: Option<f64>,
    /// One-sided p-value against the right alternative.
    pub p_value_right: f64,
    /// One-sided p-value against the left alternative.
    pub p_value_left: f64,
    /// `min(1, 2 min(left, right))`.
    pub p_value_two_sided: f64,
    /// Decision.
    pub decision: Decision,
    /// Alternative.
    pub side: Side,
    /// Overall nominal level of the test.
    pub alpha: f64,
    /// Adjusted level per tail (permutation test only).
    pub bar_alpha_used: Option<f64>,
    /// Order index of the critical value in the full assignment set.
    pub order_index: Option<u64>,
    /// Number of permutation values the decision was based on.
    pub n_assignments: Option<u64>,
    /// `"full"` or `"sampled"`.
    pub assignment_source: Option<AssignmentKind>,
    /// Seed of the assignment sample or bootstrap.
    pub seed: Option<u64>,
    /// Null offset subtracted from treated estimates.
    pub lambda: f64,
    /// All estimates were equal; the test is retained with p-value 1.
    pub degenerate: bool,
}

/// Flat tag for the assignment source in serialized outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentKind {
    /// Every assignment.
    Full,
    /// Random draws.
    Sampled,
}

/// Adjusted permutation test with the level taken from the embedded table.
///
/// For `Side::TwoSided` the overall level `alpha` is split evenly: each tail
/// uses the adjusted level tabulated for `alpha / 2`.
pub fn adjusted_test(
    theta_hat: &ClusterEstimates,
    alpha: f64,
    side: Side,
    lambda: f64,
    set: &AssignmentSet,
) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain { what: "alpha", value: alpha });
    }
    let d = theta_hat.design();
    let per_tail = if side == Side::TwoSided { alpha / 2.0 } else { alpha };
    let entry = lookup_bar_alpha(d.q1(), d.q0(), per_tail)?;
    adjusted_test_with_entry(theta_hat, &entry, side, lambda, set)
}

/// Adjusted permutation test with an explicit per-tail adjusted level.
///
/// `entry.alpha` is the per-tail level, so a two-sided test built from it has
/// overall level `2 * entry.alpha`.
pub fn adjusted_test_with_entry(
    theta_hat: &ClusterEstimates,
    entry: &AlphaEntry,
    side: Side,
    lambda: f64,
    set: &AssignmentSet,
) -> Result<TestOutcome> {
    let d = *theta_hat.design();
    if (entry.q1, entry.q0) != (d.q1(), d.q0()) {
        return Err(Error::Contract("adjusted level was computed for a different design"));
    }
    if !lambda.is_finite() {
        return Err(Error::Domain { what: "lambda", value: lambda });
    }
    let x = theta_hat.shifted(lambda)?;
    check_design(&x, set)?;
    if !set.contains_identity() {
        return Err(Error::Contract("the identity assignment must be part of the assignment set"));
    }
    let n_full = d.n_assignments();
    let j = entry.order_index;
    if j == 0 || j >= n_full {
        return Err(Error::Contract("order index must lie in 1..N-1"));
    }

    let t = comparison_of_means(&x);
    let mut values: Vec<f64> = set.assignments().iter().map(|a| permuted_statistic(&x, a)).collect();
    let n = values.len();
    let upper_hits = values.iter().filter(|v| **v >= t).count();
    let lower_hits = values.iter().filter(|v| **v <= t).count();
    values.sort_unstable_by(f64::total_cmp);

    // Full set: the order index applies directly. Sampled set: compare the
    // sampled p-value with a level strictly inside the step of the full-set
    // p-value lattice that selects the same order statistic.
    let k = if set.is_full() {
        j as usize
    } else {
        let level = (n_full - j) as f64 + 0.5;
        let level = level / n_full as f64;
        order_index_for_level(n as u64, level) as usize
    };
    let crit_upper = values[k - 1];
    let crit_lower = values[n - k];
    let reject_right = t > crit_upper;
    let reject_left = t < crit_lower;

    let p_right = upper_hits as f64 / n as f64;
    let p_left = lower_hits as f64 / n as f64;
    let (reject, critical_value, critical_value_lower, alpha) = match side {
        Side::Right => (reject_right, crit_upper, None, entry.alpha),
        Side::Left => (reject_left, -crit_lower, None, entry.alpha),
        Side::TwoSided => (reject_right || reject_left, crit_upper, Some(crit_lower), 2.0 * entry.alpha),
    };
    let (kind, seed) = match set.source() {
        AssignmentSource::Full => (AssignmentKind::Full, None),
        AssignmentSource::Sampled { seed, .. } => (AssignmentKind::Sampled, Some(seed)),
    };
    Ok(TestOutcome {
        method: Method::AdjustedPermutation,
        statistic: t,
        critical_value,
        critical_value_lower,
        p_value_right: p_right,
        p_value_left: p_left,
        p_value_two_sided: (2.0 * p_right.min(p_left)).min(1.0),
        decision: Decision::from_bool(reject),
        side,
        alpha,
        bar_alpha_used: Some(entry.bar_alpha),
        order_index: Some(j),
        n_assignments: Some(n as u64),
        assignment_source: Some(kind),
        seed,
        lambda,
        degenerate: x.is_constant(),
    })
}
