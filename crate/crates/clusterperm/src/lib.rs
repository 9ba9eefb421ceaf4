//! File formats, a thread-pool executor and the `clusterperm` command line
//! on top of [`clusterperm_core`].

pub mod cli;
pub mod config;
pub mod io;
pub mod par;

pub use cli::{dispatch, Output};
pub use par::RayonExecutor;
