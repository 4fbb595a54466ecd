use crate::grid::ScalarField;

/// Errors produced by the library.
///
/// Solver failures carry the last iterate and residual so callers can
/// inspect (or salvage) a partial result.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: parameter out of its supported range.
    #[error("configuration: {0}")]
    Config(String),

    /// Domain error: inputs outside the operation's contract.
    #[error("domain: {0}")]
    Domain(String),

    /// A point could not be classified against the free boundary.
    #[error("classification: {0}")]
    Classification(String),

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("solver did not converge: {message} (residual {residual:.3e} after {iters} iterations)")]
    NonConvergence {
        message: String,
        residual: f64,
        iters: usize,
        /// Last iterate, when one exists.
        last: Option<Box<ScalarField>>,
        /// Diagnostic trace (per-stage energies or residuals).
        trace: Vec<f64>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
