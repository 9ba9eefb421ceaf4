//! Level-adjusted permutation inference for treatment effects identified by
//! comparisons across a small number of large, heterogeneous clusters.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs plus an explicitly seeded [`rng::RngStream`];
//! file formats, the command line and thread pools live in the `clusterperm`
//! companion crate.
//!
//! The pieces, bottom up:
//!
//! * [`numerics`]: normal and Student-t distribution functions, adaptive
//!   Simpson quadrature and bracketed bisection.
//! * [`permkit`]: treated/control designs, the set of relabelings and its
//!   random subsample.
//! * [`permtest`]: comparison-of-means statistic, permutation distribution,
//!   critical values, p-values, the worst-case size bound, the table of
//!   adjusted levels and the adjusted test itself.
//! * [`calibrate`]: Monte-Carlo search for adjusted levels not in the table.
//! * [`power`]: analytic lower bound on power.
//! * [`estimators`]: per-cluster estimates from raw data.
//! * [`rivals`]: studentized cluster t-test, pooled cluster-robust t-test and
//!   wild cluster bootstrap.
//! * [`simharness`]: the normal-location and difference-in-differences
//!   simulation studies.
#![no_std]
#![warn(missing_docs)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod linalg;
pub mod numerics;
pub mod permkit;
pub mod permtest;
pub mod power;
pub mod rivals;
pub mod rng;
pub mod simharness;

pub use error::{Error, Result};
pub use permkit::{Assignment, AssignmentSet, Design};
pub use permtest::{AlphaEntry, ClusterEstimates, Side, TestOutcome};
