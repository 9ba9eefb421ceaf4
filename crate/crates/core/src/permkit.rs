//! Treated/control designs and the set of relabelings.
//!
//! The comparison-of-means statistic does not care how entries are ordered
//! within the treated or the control group, so a relabeling is fully
//! described by which `q1` of the `q` positions it sends to the treated
//! group. [`Assignment`] stores exactly that, as a bit mask over positions.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest supported number of clusters.
pub const MAX_CLUSTERS: usize = 64;

/// Default cap on full enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Binomial coefficient C(n, k) in 128-bit arithmetic.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Numbers of treated and control clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Design {
    q1: usize,
    q0: usize,
}

impl Design {
    /// Requires `q1 >= 1`, `q0 >= 1` and `q1 + q0 <= 64`.
    pub fn new(q1: usize, q0: usize) -> Result<Self> {
        if q1 == 0 || q0 == 0 {
            return Err(Error::Validation(alloc::format!(
                "need at least one treated and one control cluster (q1 = {q1}, q0 = {q0})"
            )));
        }
        if q1 + q0 > MAX_CLUSTERS {
            return Err(Error::Validation(alloc::format!(
                "at most {MAX_CLUSTERS} clusters are supported, got {}",
                q1 + q0
            )));
        }
        Ok(Self { q1, q0 })
    }

    /// Treated clusters.
    pub fn q1(&self) -> usize {
        self.q1
    }

    /// Control clusters.
    pub fn q0(&self) -> usize {
        self.q0
    }

    /// Total clusters.
    pub fn q(&self) -> usize {
        self.q1 + self.q0
    }

    /// Size of the full assignment set, C(q, q1).
    pub fn n_assignments(&self) -> u64 {
        // q <= 64 keeps this below 2^63.
        binomial(self.q(), self.q1) as u64
    }

    /// The assignment that leaves the data as observed.
    pub fn identity(&self) -> Assignment {
        Assignment(low_bits(self.q1))
    }

    /// The same counts with the roles of the groups exchanged.
    pub fn transposed(&self) -> Design {
        Design { q1: self.q0, q0: self.q1 }
    }

    fn all_mask(&self) -> u64 {
        low_bits(self.q())
    }
}

fn low_bits(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// A relabeling, stored as the set of positions sent to the treated group.
///
/// Positions are zero-based internally; [`Assignment::one_based`] gives the
/// conventional 1..=q labels used in serialized output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(u64);

impl Assignment {
    /// Builds an assignment from zero-based treated positions.
    pub fn from_treated(design: &Design, treated: &[usize]) -> Result<Self> {
        if treated.len() != design.q1() {
            return Err(Error::Shape { expected: design.q1(), found: treated.len() });
        }
        let mut mask = 0u64;
        for &k in treated {
            if k >= design.q() {
                return Err(Error::Validation(alloc::format!(
                    "position {k} out of range for q = {}",
                    design.q()
                )));
            }
            if mask & (1 << k) != 0 {
                return Err(Error::Validation(alloc::format!("position {k} repeated")));
            }
            mask |= 1 << k;
        }
        Ok(Assignment(mask))
    }

    /// Raw bit mask of treated positions.
    pub fn mask(&self) -> u64 {
        self.0
    }

    /// Treated positions in increasing order, zero-based.
    pub fn treated(&self) -> BitIter {
        BitIter(self.0)
    }

    /// Control positions in increasing order, zero-based.
    pub fn control(&self, design: &Design) -> BitIter {
        BitIter(!self.0 & design.all_mask())
    }

    /// Whether position `k` is treated.
    pub fn is_treated(&self, k: usize) -> bool {
        k < 64 && self.0 & (1 << k) != 0
    }

    /// Treated positions as 1-based labels.
    pub fn one_based(&self) -> Vec<usize> {
        self.treated().map(|k| k + 1).collect()
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, k) in self.treated().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", k + 1)?;
        }
        f.write_str("}")
    }
}

impl Serialize for Assignment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.treated().map(|k| k + 1))
    }
}

/// Iterator over set bits, lowest first.
#[derive(Debug, Clone)]
pub struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let k = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(k)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for BitIter {}

/// All C(q, q1) assignments in lexicographic order of their treated sets.
///
/// The identity comes first. Fails with [`Error::Capacity`] when the count
/// exceeds `cap`.
pub fn enumerate_assignments(design: &Design, cap: u64) -> Result<Vec<Assignment>> {
    let total = binomial(design.q(), design.q1());
    if total > cap as u128 {
        return Err(Error::Capacity { required: total, cap });
    }
    let (q, k) = (design.q(), design.q1());
    let mut out = Vec::with_capacity(total as usize);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(Assignment(idx.iter().fold(0u64, |m, &i| m | (1 << i))));
        // Rightmost position that can still advance.
        let mut i = k;
        while i > 0 && idx[i - 1] == q - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(out)
}

/// A uniformly random assignment (Floyd's subset sampling).
pub fn random_assignment(design: &Design, rng: &mut RngStream) -> Assignment {
    let (q, k) = (design.q(), design.q1());
    let mut mask = 0u64;
    for j in (q - k)..q {
        let t = rng.below(j + 1);
        if mask & (1 << t) == 0 {
            mask |= 1 << t;
        } else {
            mask |= 1 << j;
        }
    }
    Assignment(mask)
}

/// `m` independent uniform draws from the assignment set, with replacement.
///
/// With `include_identity` the first draw is replaced by the identity.
pub fn sample_assignments(
    design: &Design,
    m: usize,
    include_identity: bool,
    rng: &mut RngStream,
) -> Result<Vec<Assignment>> {
    if m == 0 {
        return Err(Error::Contract("sample size m must be at least 1"));
    }
    let mut out: Vec<Assignment> = (0..m).map(|_| random_assignment(design, rng)).collect();
    if include_identity {
        out[0] = design.identity();
    }
    Ok(out)
}

/// Variance of the permuted comparison of means when entry `k` has
/// variance `sigmas[k]^2` and entries are independent.
///
/// Entry `k` gets weight `1/q1` if the assignment puts it in the treated
/// group and `-1/q0` otherwise, so the variance is `sum_k w_k^2 sigma_k^2`.
pub fn assignment_variance(design: &Design, a: &Assignment, sigmas: &[f64]) -> Result<f64> {
    if sigmas.len() != design.q() {
        return Err(Error::Shape { expected: design.q(), found: sigmas.len() });
    }
    if let Some(&bad) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Domain { what: "standard deviation", value: bad });
    }
    let w1 = 1.0 / (design.q1() as f64 * design.q1() as f64);
    let w0 = 1.0 / (design.q0() as f64 * design.q0() as f64);
    Ok(sigmas
        .iter()
        .enumerate()
        .map(|(k, s)| s * s * if a.is_treated(k) { w1 } else { w0 })
        .sum())
}

/// Where an [`AssignmentSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentSource {
    /// Every assignment, each exactly once.
    Full,
    /// Independent uniform draws with replacement.
    Sampled {
        /// Number of draws.
        m: usize,
        /// Master seed of the stream used.
        seed: u64,
        /// Stream index used.
        stream_id: u64,
        /// Whether the first draw was replaced by the identity.
        include_identity: bool,
    },
}

/// The relabelings a permutation test is computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSet {
    design: Design,
    items: Vec<Assignment>,
    source: AssignmentSource,
}

impl AssignmentSet {
    /// The full set, or a capacity error if it has more than `cap` members.
    pub fn full(design: Design, cap: u64) -> Result<Self> {
        Ok(Self { items: enumerate_assignments(&design, cap)?, design, source: AssignmentSource::Full })
    }

    /// `m` draws with replacement from `rng`.
    pub fn sampled(design: Design, m: usize, include_identity: bool, rng: &mut RngStream) -> Result<Self> {
        let items = sample_assignments(&design, m, include_identity, rng)?;
        Ok(Self {
            design,
            items,
            source: AssignmentSource::Sampled { m, seed: rng.seed(), stream_id: rng.stream_id(), include_identity },
        })
    }

    /// Full enumeration when it fits under `cap`, otherwise `m` draws with the
    /// identity included.
    pub fn full_or_sampled(design: Design, cap: u64, m: usize, rng: &mut RngStream) -> Result<Self> {
        if design.n_assignments() <= cap {
            Self::full(design, cap)
        } else {
            Self::sampled(design, m, true, rng)
        }
    }

    /// Wraps an explicit list of assignments as a sample.
    pub fn from_assignments(design: Design, items: Vec<Assignment>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Contract("assignment set must be nonempty"));
        }
        let include_identity = items.first() == Some(&design.identity());
        let m = items.len();
        Ok(Self { design, items, source: AssignmentSource::Sampled { m, seed: 0, stream_id: 0, include_identity } })
    }

    /// Design the set belongs to.
    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Members, in generation order.
    pub fn assignments(&self) -> &[Assignment] {
        &self.items
    }

    /// Number of members (with multiplicity).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Always false for sets built through the constructors.
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Provenance.
    pub fn source(&self) -> AssignmentSource {
        self.source
    }

    /// Whether this is the full set.
    pub fn is_full(&self) -> bool {
        matches!(self.source, AssignmentSource::Full)
    }

    /// Whether the identity is a member.
    pub fn contains_identity(&self) -> bool {
        let id = self.design.identity();
        match self.source {
            AssignmentSource::Full => true,
            AssignmentSource::Sampled { include_identity: true, .. } => true,
            _ => self.items.iter().any(|a| *a == id),
        }
    }
}
