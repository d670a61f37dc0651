//! Sparsity-constrained and sparsity-penalized regression over low-rank data.
//!
//! The pipeline solves the interval (bidual) relaxation of the problem,
//! recovers a sparse feasible point from a vertex of a small linear program,
//! and reports certified upper and lower bounds on the optimal value.

pub mod certify;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod primalize;
pub mod relax;
pub mod report;
pub mod rng;
pub mod spectra;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
