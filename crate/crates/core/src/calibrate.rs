//! Monte-Carlo search for adjusted levels.
//!
//! Both routes draw `R` variance vectors with independent Beta entries, score
//! each by the simulated rejection rate of a candidate test under the null,
//! and move the candidate from conservative to liberal until some variance
//! vector pushes the rate above `alpha`. The last candidate that held is
//! returned.
//!
//! Every candidate is scored on the same simulated data: for each variance
//! draw the first pass stores, per simulated `X`, the number of relabelings
//! whose treated sum falls below the identity's (or, on the sampled route,
//! the number at or above it). Rates at every candidate then come from a
//! single histogram, which makes them exactly monotone in the candidate.
//! A second pass rescores the worst draws on fresh, larger samples.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::permkit::{binomial, enumerate_assignments, sample_assignments, Design, DEFAULT_ENUMERATION_CAP};
use crate::permtest::{order_index_for_level, size_bound, AlphaEntry, EntrySource};
use crate::rng::RngStream;

/// Offset added to the stream id of second-pass draws.
const SECOND_PASS: u64 = 1 << 32;

/// Restriction on the variance space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarianceRestriction {
    /// Unrestricted Beta draws.
    None,
    /// Beta draws conditioned on `[lo, hi]`.
    Truncate {
        /// Lower end, in `[0, 1)`.
        lo: f64,
        /// Upper end, in `(lo, 1]`.
        hi: f64,
    },
    /// Every variance equal to one.
    Homogeneous,
}

/// Tuning of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    /// Number of variance draws `R`.
    pub r: usize,
    /// Replications per draw in the first pass.
    pub s1: usize,
    /// Replications per draw in the second pass.
    pub s2: usize,
    /// Share of worst first-pass draws rescored in the second pass.
    pub top_fraction: f64,
    /// First Beta shape parameter.
    pub beta_a: f64,
    /// Second Beta shape parameter.
    pub beta_b: f64,
    /// Slack added to `alpha` before a rate counts as a violation.
    pub eta: f64,
    /// Grid step of the sampled route.
    pub epsilon: f64,
    /// Relabelings drawn per variance draw on the sampled route.
    pub m: usize,
    /// Designs with at least this many relabelings use the sampled route.
    pub enumeration_threshold: u64,
    /// Master seed.
    pub seed: u64,
    /// Variance-space restriction.
    pub restriction: VarianceRestriction,
    /// First grid point of the sampled route; `alpha` when absent.
    pub start_level: Option<f64>,
}

impl CalibrationParams {
    /// The settings used to build the embedded table, with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            r: 3000,
            s1: 1000,
            s2: 10_000,
            top_fraction: 0.01,
            beta_a: 0.1,
            beta_b: 0.1,
            eta: 0.0,
            epsilon: 0.005,
            m: 1500,
            enumeration_threshold: 1500,
            seed,
            restriction: VarianceRestriction::None,
            start_level: None,
        }
    }

    /// Checks ranges.
    pub fn validate(&self) -> Result<()> {
        let positive = |what, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(Error::Domain { what, value: v }) };
        if self.r == 0 || self.s1 == 0 || self.s2 == 0 || self.m == 0 || self.enumeration_threshold == 0 {
            return Err(Error::Contract("counts in calibration parameters must be positive"));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::Domain { what: "top_fraction", value: self.top_fraction });
        }
        positive("beta_a", self.beta_a)?;
        positive("beta_b", self.beta_b)?;
        positive("epsilon", self.epsilon)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Domain { what: "eta", value: self.eta });
        }
        if let VarianceRestriction::Truncate { lo, hi } = self.restriction {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Domain { what: "truncation interval", value: lo });
            }
        }
        if let Some(p) = self.start_level {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain { what: "start_level", value: p });
            }
        }
        Ok(())
    }

    fn top_count(&self) -> usize {
        (libm::ceil(self.top_fraction * self.r as f64) as usize).clamp(1, self.r)
    }
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

/// Which search produced a [`Calibration`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Full enumeration, searching over order indices.
    Exhaustive,
    /// Sampled relabelings, searching over a level grid.
    Sampled,
}

/// One candidate visited by the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Order index (exhaustive route) or `ceil((1 - p) N)` (sampled route).
    pub order_index: u64,
    /// Candidate level.
    pub level: f64,
    /// Largest first-pass rate over all draws.
    pub first_pass_max: f64,
    /// Largest second-pass rate over the rescored draws.
    pub second_pass_max: f64,
    /// Draw attaining `second_pass_max`.
    pub worst_draw: usize,
}

/// Result of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Adjusted level found.
    pub entry: AlphaEntry,
    /// Search route.
    pub route: Route,
    /// Settings used.
    pub params: CalibrationParams,
    /// Variances of the worst draw at the returned level.
    pub worst_variances: Vec<f64>,
    /// Second-pass rate of that draw.
    pub worst_rate: f64,
    /// Worst second-pass rate at the next more liberal candidate, which
    /// exceeded `alpha + eta` and stopped the search; absent when the search
    /// reached the most liberal candidate.
    pub violating_rate: Option<f64>,
    /// Candidates in the order visited.
    pub trace: Vec<TraceStep>,
}

/// A critical value for [`rejection_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// The `j`-th smallest value over the full set of relabelings.
    OrderIndex(u64),
    /// Level `p` over `m` sampled relabelings with the identity included.
    Level {
        /// Nominal level.
        p: f64,
        /// Sample size.
        m: usize,
    },
}

/// Treated index lists of a set of relabelings, flattened for fast sums.
struct Sums {
    q1: usize,
    idx: Vec<u8>,
}

impl Sums {
    fn full(design: &Design) -> Result<Self> {
        let all = enumerate_assignments(design, DEFAULT_ENUMERATION_CAP)?;
        Ok(Self::from_list(design, &all))
    }

    fn from_list(design: &Design, list: &[crate::permkit::Assignment]) -> Self {
        let mut idx = Vec::with_capacity(list.len() * design.q1());
        for a in list {
            idx.extend(a.treated().map(|k| k as u8));
        }
        Self { q1: design.q1(), idx }
    }

    fn len(&self) -> usize {
        self.idx.len() / self.q1
    }

    fn sum(&self, g: usize, x: &[f64]) -> f64 {
        self.idx[g * self.q1..(g + 1) * self.q1].iter().map(|&k| x[k as usize]).sum()
    }

    /// Number of relabelings with treated sum strictly below the identity's.
    fn below_identity(&self, x: &[f64]) -> usize {
        let s_id: f64 = x[..self.q1].iter().sum();
        (0..self.len()).filter(|&g| self.sum(g, x) < s_id).count()
    }

    /// Number of relabelings with treated sum at or above the identity's.
    fn at_or_above_identity(&self, x: &[f64]) -> usize {
        let s_id: f64 = x[..self.q1].iter().sum();
        (0..self.len()).filter(|&g| self.sum(g, x) >= s_id).count()
    }
}

fn draw_x(sd: &[f64], x: &mut [f64], rng: &mut RngStream) {
    for (xi, s) in x.iter_mut().zip(sd) {
        *xi = s * rng.normal();
    }
}

fn check_variances(design: &Design, variances: &[f64]) -> Result<Vec<f64>> {
    if variances.len() != design.q() {
        return Err(Error::Shape { expected: design.q(), found: variances.len() });
    }
    variances
        .iter()
        .map(|&v| if v > 0.0 && v.is_finite() { Ok(libm::sqrt(v)) } else { Err(Error::Domain { what: "variance", value: v }) })
        .collect()
}

/// Simulated probability that the test with the given critical value rejects
/// when `X ~ N(0, diag(variances))`.
///
/// Rejection at order index `j` means `T(X)` exceeds the `j`-th smallest
/// permutation value; at a sampled level it means the sampled p-value is at
/// most `p`. The relabeling sample for a level threshold is drawn once from
/// `rng` before the replications. Variances need only be positive; the
/// decision is invariant to a common rescaling.
pub fn rejection_rate(
    design: &Design,
    threshold: Threshold,
    variances: &[f64],
    s: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let sd = check_variances(design, variances)?;
    if s == 0 {
        return Err(Error::Contract("replication count must be positive"));
    }
    let mut x = vec![0.0; design.q()];
    let mut hits = 0usize;
    match threshold {
        Threshold::OrderIndex(j) => {
            let n = design.n_assignments();
            if j == 0 || j > n {
                return Err(Error::Domain { what: "order index", value: j as f64 });
            }
            let sums = Sums::full(design)?;
            for _ in 0..s {
                draw_x(&sd, &mut x, rng);
                if sums.below_identity(&x) as u64 >= j {
                    hits += 1;
                }
            }
        }
        Threshold::Level { p, m } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain { what: "level", value: p });
            }
            let list = sample_assignments(design, m, true, rng)?;
            let sums = Sums::from_list(design, &list);
            let cmax = level_count(p, m);
            for _ in 0..s {
                draw_x(&sd, &mut x, rng);
                if sums.at_or_above_identity(&x) <= cmax {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / s as f64)
}

/// Largest count `c` with `c / m <= p`.
fn level_count(p: f64, m: usize) -> usize {
    libm::floor(p * m as f64 * (1.0 + 1e-12)) as usize
}

fn draw_variances(design: &Design, params: &CalibrationParams, rng: &mut RngStream) -> Vec<f64> {
    (0..design.q())
        .map(|_| match params.restriction {
            VarianceRestriction::Homogeneous => 1.0,
            VarianceRestriction::None => draw_beta(params, rng, 0.0, 1.0),
            VarianceRestriction::Truncate { lo, hi } => draw_beta(params, rng, lo, hi),
        })
        .collect()
}

fn draw_beta(params: &CalibrationParams, rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    for _ in 0..1_000_000 {
        let v = rng.beta(params.beta_a, params.beta_b);
        if v.is_finite() && v >= lo && v <= hi {
            return v.max(f64::MIN_POSITIVE);
        }
    }
    // Truncation interval with negligible mass: fall back to its midpoint.
    (0.5 * (lo + hi)).max(f64::MIN_POSITIVE)
}

/// Per variance draw: the draw itself, the relabeling sample (sampled route)
/// and a first-pass histogram of counts.
struct Draw {
    variances: Vec<f64>,
    sums: Option<Sums>,
    hist: Vec<u32>,
}

fn histogram(sums: &Sums, variances: &[f64], s: usize, below: bool, rng: &mut RngStream) -> Vec<u32> {
    let sd: Vec<f64> = variances.iter().map(|v| libm::sqrt(*v)).collect();
    let mut hist = vec![0u32; sums.len() + 1];
    let mut x = vec![0.0; sd.len()];
    for _ in 0..s {
        draw_x(&sd, &mut x, rng);
        let c = if below { sums.below_identity(&x) } else { sums.at_or_above_identity(&x) };
        hist[c] += 1;
    }
    hist
}

/// Lazily filled second-pass histograms.
struct SecondPass<'a, E: Executor> {
    params: &'a CalibrationParams,
    exec: &'a E,
    full: Option<&'a Sums>,
    below: bool,
    /// Second-pass histograms, already turned into cumulative counts.
    cache: Vec<Option<Vec<u32>>>,
}

impl<E: Executor> SecondPass<'_, E> {
    fn ensure(&mut self, draws: &[Draw], wanted: &[usize]) {
        let missing: Vec<usize> = wanted.iter().copied().filter(|&r| self.cache[r].is_none()).collect();
        if missing.is_empty() {
            return;
        }
        let (params, full, below) = (self.params, self.full, self.below);
        let fresh = self.exec.map_indices(missing.len(), |i| {
            let r = missing[i];
            let d = &draws[r];
            let sums = d.sums.as_ref().or(full).expect("relabelings available");
            let mut rng = RngStream::new(params.seed, SECOND_PASS | r as u64);
            let hist = histogram(sums, &d.variances, params.s2, below, &mut rng);
            if below {
                upper_tail(&hist)
            } else {
                lower_head(&hist)
            }
        });
        for (r, h) in missing.into_iter().zip(fresh) {
            self.cache[r] = Some(h);
        }
    }
}

/// Tail counts: `tail[c] = #{count >= c}`.
fn upper_tail(hist: &[u32]) -> Vec<u32> {
    let mut tail = vec![0u32; hist.len() + 1];
    for c in (0..hist.len()).rev() {
        tail[c] = tail[c + 1] + hist[c];
    }
    tail
}

/// Head counts: `head[c] = #{count <= c}`.
fn lower_head(hist: &[u32]) -> Vec<u32> {
    let mut head = vec![0u32; hist.len()];
    let mut acc = 0;
    for (c, h) in hist.iter().enumerate() {
        acc += h;
        head[c] = acc;
    }
    head
}

/// Scores one candidate: worst first-pass draws, rescored.
fn score<E: Executor>(
    draws: &[Draw],
    first: &[Vec<u32>],
    second: &mut SecondPass<'_, E>,
    rate_of: impl Fn(&[u32]) -> u32,
) -> (f64, f64, usize) {
    let params = second.params;
    let mut order: Vec<(u32, usize)> = first.iter().enumerate().map(|(r, t)| (rate_of(t), r)).collect();
    order.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let top: Vec<usize> = order.iter().take(params.top_count()).map(|&(_, r)| r).collect();
    let first_max = order[0].0 as f64 / params.s1 as f64;
    second.ensure(draws, &top);
    let mut worst = (f64::NEG_INFINITY, top[0]);
    for &r in &top {
        let cache = second.cache[r].as_ref().expect("filled above");
        let rate = rate_of(cache) as f64 / params.s2 as f64;
        if rate > worst.0 {
            worst = (rate, r);
        }
    }
    (first_max, worst.0, worst.1)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "alpha", value: alpha })
    }
}

/// Searches order indices over the full set of relabelings.
///
/// Starting from `j = N - 1` (the most conservative nontrivial test, which
/// must hold or the level is infeasible) the index is lowered one step at a
/// time until some draw's rescored rate exceeds `alpha + eta`; the previous
/// index `j*` is returned with `bar_alpha = 1 - j*/N`.
pub fn calibrate_exhaustive<E: Executor>(
    design: &Design,
    alpha: f64,
    params: &CalibrationParams,
    exec: &E,
) -> Result<Calibration> {
    check_alpha(alpha)?;
    params.validate()?;
    let n = design.n_assignments();
    if n < 2 {
        return Err(Error::Infeasible { q1: design.q1(), q0: design.q0(), alpha, smallest_feasible: 1.0 });
    }
    let sums = Sums::full(design)?;
    let draws: Vec<Draw> = exec.map_indices(params.r, |r| {
        let mut rng = RngStream::new(params.seed, r as u64);
        let variances = draw_variances(design, params, &mut rng);
        let hist = histogram(&sums, &variances, params.s1, true, &mut rng);
        Draw { variances, sums: None, hist }
    });
    let first: Vec<Vec<u32>> = draws.iter().map(|d| upper_tail(&d.hist)).collect();
    let mut second = SecondPass {
        params,
        exec,
        full: Some(&sums),
        below: true,
        cache: (0..params.r).map(|_| None).collect(),
    };
    let limit = alpha + params.eta;
    let mut trace = Vec::new();
    let mut accepted: Option<TraceStep> = None;
    let mut violating = None;
    let mut j = n - 1;
    loop {
        let (first_max, second_max, worst) = score(&draws, &first, &mut second, |tail| tail[j as usize]);
        let step = TraceStep {
            order_index: j,
            level: 1.0 - j as f64 / n as f64,
            first_pass_max: first_max,
            second_pass_max: second_max,
            worst_draw: worst,
        };
        trace.push(step);
        if second_max > limit {
            violating = Some(second_max);
            break;
        }
        accepted = Some(step);
        if j == 1 {
            break;
        }
        j -= 1;
    }
    let Some(best) = accepted else {
        return Err(Error::Infeasible {
            q1: design.q1(),
            q0: design.q0(),
            alpha,
            smallest_feasible: size_bound(design.q1(), design.q0()),
        });
    };
    let j_star = best.order_index;
    Ok(Calibration {
        entry: AlphaEntry {
            q1: design.q1(),
            q0: design.q0(),
            alpha,
            bar_alpha: 1.0 - j_star as f64 / n as f64,
            order_index: j_star,
            n_assignments: n,
            source: EntrySource::Calibrated,
            starred: j_star == n - 1,
        },
        route: Route::Exhaustive,
        params: params.clone(),
        worst_variances: draws[best.worst_draw].variances.clone(),
        worst_rate: best.second_pass_max,
        violating_rate: violating,
        trace,
    })
}

/// Searches a level grid over sampled relabelings.
///
/// Levels `start, start - epsilon, start - 2 epsilon, ...` are scored until
/// the first one whose rescored rates all stay within `alpha + eta`; that
/// level is returned. Each variance draw keeps one sample of `m` relabelings
/// (identity first) for both passes. The search gives up once the level
/// drops below `max(1/N, 1/m)`, where no rejection is possible.
pub fn calibrate_sampled<E: Executor>(
    design: &Design,
    alpha: f64,
    params: &CalibrationParams,
    exec: &E,
) -> Result<Calibration> {
    check_alpha(alpha)?;
    params.validate()?;
    let n = design.n_assignments();
    let m = params.m;
    let draws: Vec<Draw> = exec.map_indices(params.r, |r| {
        let mut rng = RngStream::new(params.seed, r as u64);
        let variances = draw_variances(design, params, &mut rng);
        let list = sample_assignments(design, m, true, &mut rng).expect("m is positive");
        let sums = Sums::from_list(design, &list);
        let hist = histogram(&sums, &variances, params.s1, false, &mut rng);
        Draw { variances, sums: Some(sums), hist }
    });
    let first: Vec<Vec<u32>> = draws.iter().map(|d| lower_head(&d.hist)).collect();
    let mut second = SecondPass {
        params,
        exec,
        full: None,
        below: false,
        cache: (0..params.r).map(|_| None).collect(),
    };
    let limit = alpha + params.eta;
    let floor = (1.0 / n as f64).max(1.0 / m as f64);
    let start = params.start_level.unwrap_or(alpha);
    let mut trace = Vec::new();
    let mut violating = None;
    let mut k = 0u64;
    loop {
        let p = start - k as f64 * params.epsilon;
        if p < floor * (1.0 - 1e-12) {
            return Err(Error::Infeasible {
                q1: design.q1(),
                q0: design.q0(),
                alpha,
                smallest_feasible: size_bound(design.q1(), design.q0()),
            });
        }
        let c = level_count(p, m);
        let (first_max, second_max, worst) = score(&draws, &first, &mut second, |head| head[c.min(m)]);
        let j = order_index_for_level(n, p).min(n - 1);
        let step = TraceStep { order_index: j, level: p, first_pass_max: first_max, second_pass_max: second_max, worst_draw: worst };
        trace.push(step);
        if second_max <= limit {
            return Ok(Calibration {
                entry: AlphaEntry {
                    q1: design.q1(),
                    q0: design.q0(),
                    alpha,
                    bar_alpha: p,
                    order_index: j,
                    n_assignments: n,
                    source: EntrySource::Calibrated,
                    starred: j == n - 1,
                },
                route: Route::Sampled,
                params: params.clone(),
                worst_variances: draws[worst].variances.clone(),
                worst_rate: second_max,
                violating_rate: violating,
                trace,
            });
        }
        violating = Some(second_max);
        k += 1;
    }
}

/// Picks the route by the number of relabelings.
pub fn calibrate<E: Executor>(design: &Design, alpha: f64, params: &CalibrationParams, exec: &E) -> Result<Calibration> {
    if (binomial(design.q(), design.q1())) < params.enumeration_threshold as u128 {
        calibrate_exhaustive(design, alpha, params, exec)
    } else {
        calibrate_sampled(design, alpha, params, exec)
    }
}
