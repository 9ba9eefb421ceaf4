//! Pluggable executors for embarrassingly parallel loops.
//!
//! Monte-Carlo work in this crate is written as "evaluate unit `i` for
//! `i in 0..n`", where every unit derives its own [`crate::rng::RngStream`]
//! from its index. Results are therefore identical whichever executor runs
//! the units and however many workers it uses.

use alloc::vec::Vec;

/// Maps a function over `0..n`, returning results in index order.
pub trait Executor: Sync {
    /// Evaluates `f(0), ..., f(n - 1)`.
    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every unit on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
