//! Error types shared across the toolkit.

use thiserror::Error;

/// Convergence history attached to a diverged ergodic solve.
#[derive(Debug, Clone)]
pub struct DivergenceHistory {
    /// Horizons at which checkpoints were taken.
    pub horizons: Vec<f64>,
    /// Max interior Cauchy increment of the normalized field at each checkpoint.
    pub cauchy_increments: Vec<f64>,
    /// Interior standard deviation of the discrete time derivative at each checkpoint.
    pub rate_stds: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration file, bad key, or inconsistent run setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// Command-line usage error (wrong subcommand arguments, mismatched families).
    #[error("usage error: {0}")]
    Usage(String),

    /// A model coefficient evaluated to a non-finite value or the wrong shape.
    #[error("model evaluation error: {0}")]
    ModelEval(String),

    /// sigma*sigma^T or Lambda*Lambda^T singular where invertibility is required.
    #[error("ellipticity error: {0}")]
    Ellipticity(String),

    /// Finite-difference solver failure (instability, NaN, linear-solve breakdown).
    #[error("solver error: {0}")]
    Solver(String),

    /// Ergodic solve ran out of horizon without meeting the convergence tolerances.
    #[error("ergodic solve diverged: no convergence by horizon {max_horizon}")]
    Diverged {
        max_horizon: f64,
        history: DivergenceHistory,
    },

    /// Path simulation failure; names the offending path and step.
    #[error("simulation error: {0}")]
    Simulation(String),

    /// Query outside the support of a grid field.
    #[error("interpolation error: {0}")]
    OutOfDomain(String),

    /// Assumption check failed (used by the CLI to map to exit code 3).
    #[error("assumption failure: {0}")]
    Assumption(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
