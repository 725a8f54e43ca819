//! Error taxonomy shared by every module.
//!
//! Variants are grouped by where the failure belongs in a pipeline run:
//! configuration, input data, model fitting, equation solving, and
//! resampling-ceiling violations. The CLI maps each group to a distinct
//! exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (bad fold count, bad clip range,
    /// malformed law descriptor, zero replications, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data failed validation (missing column, non-numeric cell,
    /// negative time, single-arm sample, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A working model could not be fitted (separation, rank deficiency,
    /// no target events, monotone likelihood, ...).
    #[error("nuisance fit failed: {0}")]
    Nuisance(String),

    /// The estimating equation or a numeric routine failed to produce a
    /// solution (no bracketed root, degenerate information, ...).
    #[error("solver failed: {0}")]
    Solver(String),

    /// Too many resampling replicates failed (bootstrap or Monte Carlo).
    #[error("{failed} of {total} replicates failed (ceiling {ceiling_percent}%)")]
    ReplicateCeiling {
        failed: usize,
        total: usize,
        ceiling_percent: u8,
    },

    /// Underlying I/O failure while reading or writing files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn nuisance(msg: impl Into<String>) -> Self {
        Error::Nuisance(msg.into())
    }

    pub fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }
}
