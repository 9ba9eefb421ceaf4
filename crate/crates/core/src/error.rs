//! Error type shared by every module.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the inference engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    Domain {
        /// Which argument or function.
        what: &'static str,
        /// Offending value.
        value: f64,
    },
    /// An iterative numerical routine did not reach its tolerance.
    Numerical {
        /// Which routine.
        what: &'static str,
        /// Best estimate available when the routine gave up.
        partial: f64,
    },
    /// A root finder was handed an interval without a sign change.
    Bracket {
        /// Lower end of the bracket.
        lo: f64,
        /// Upper end of the bracket.
        hi: f64,
    },
    /// Full enumeration of the assignment set would exceed the cap.
    Capacity {
        /// Number of assignments that would be produced.
        required: u128,
        /// Configured cap.
        cap: u64,
    },
    /// Vector or matrix dimensions do not match.
    Shape {
        /// Expected length.
        expected: usize,
        /// Length supplied.
        found: usize,
    },
    /// A caller-side precondition was violated.
    Contract(&'static str),
    /// No nontrivial adjusted test exists for this design and level.
    Infeasible {
        /// Treated clusters.
        q1: usize,
        /// Control clusters.
        q0: usize,
        /// Requested one-sided level.
        alpha: f64,
        /// Worst-case size of the most conservative nontrivial test; levels
        /// at or above this are always feasible.
        smallest_feasible: f64,
    },
    /// The (q1, q0, alpha) triple is not covered by the embedded table.
    NotTabulated {
        /// Treated clusters.
        q1: usize,
        /// Control clusters.
        q0: usize,
        /// Requested one-sided level.
        alpha: f64,
        /// Worst-case size bound of the most conservative nontrivial test;
        /// any level at or above it is feasible.
        size_bound: f64,
    },
    /// A design matrix is rank deficient.
    RankDeficient {
        /// Cluster identifier, or `"pooled"`.
        cluster: String,
        /// Numerical rank found.
        rank: usize,
        /// Number of columns.
        cols: usize,
    },
    /// A cluster has fewer rows than parameters.
    InsufficientRows {
        /// Cluster identifier.
        cluster: String,
        /// Rows available.
        rows: usize,
        /// Parameters to estimate.
        params: usize,
    },
    /// A binary-choice fit diverged or the outcomes are perfectly separated.
    Separation {
        /// Cluster identifier.
        cluster: String,
    },
    /// A Newton iteration ran out of steps.
    NoConvergence {
        /// Cluster identifier.
        cluster: String,
        /// Max-norm of the moment vector at the last iterate.
        residual: f64,
    },
    /// Both groups are constant, so a studentized statistic is undefined.
    Degenerate(&'static str),
    /// Input data violate a structural invariant.
    Validation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { what, value } => write!(f, "{what}: argument {value} out of domain"),
            Error::Numerical { what, partial } => {
                write!(f, "{what} did not converge (partial estimate {partial})")
            }
            Error::Bracket { lo, hi } => write!(f, "no sign change on [{lo}, {hi}]"),
            Error::Capacity { required, cap } => write!(
                f,
                "{required} assignments exceed the enumeration cap of {cap}; sample assignments instead"
            ),
            Error::Shape { expected, found } => {
                write!(f, "expected length {expected}, found {found}")
            }
            Error::Contract(msg) => write!(f, "contract violated: {msg}"),
            Error::Infeasible { q1, q0, alpha, smallest_feasible } => write!(
                f,
                "alpha = {alpha} is infeasible for q1 = {q1}, q0 = {q0}; the most conservative \
                 nontrivial test has worst-case size {smallest_feasible:.4}"
            ),
            Error::NotTabulated { q1, q0, alpha, size_bound } => write!(
                f,
                "no tabulated adjusted level for q1 = {q1}, q0 = {q0}, alpha = {alpha}; run the \
                 calibration (levels >= {size_bound:.4} are guaranteed feasible)"
            ),
            Error::RankDeficient { cluster, rank, cols } => {
                write!(f, "cluster {cluster}: design has rank {rank} < {cols} columns")
            }
            Error::InsufficientRows { cluster, rows, params } => {
                write!(f, "cluster {cluster}: {rows} rows for {params} parameters")
            }
            Error::Separation { cluster } => {
                write!(f, "cluster {cluster}: outcomes are perfectly separated")
            }
            Error::NoConvergence { cluster, residual } => {
                write!(f, "cluster {cluster}: Newton iteration stalled at |moment| = {residual:e}")
            }
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::Validation(msg) => write!(f, "invalid data: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

impl Error {
    /// True for errors caused by the caller's input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical { .. } | Error::NoConvergence { .. })
    }
}
