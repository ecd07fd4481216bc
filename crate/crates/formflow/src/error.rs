//! Error type shared by every numerical layer of the crate.

use thiserror::Error;

/// Errors produced by the geometric and numerical operations.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Mismatched chart dimensions or degree arithmetic overflow.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Form degree outside the valid range for an operation.
    #[error("degree error: {0}")]
    Degree(String),

    /// ODE state left the finite range; `t_last` is the last good time.
    #[error("flow diverged, last good time t = {t_last}")]
    Divergence { t_last: f64 },

    /// Newton iteration did not converge.
    #[error("Newton iteration failed: {0}")]
    Newton(String),

    /// Characteristic or geodesic fan Jacobian degenerated.
    #[error("caustic: |det| = {det:.3e} at t = {t}; first singular time ~ {t_estimate}")]
    Caustic { det: f64, t: f64, t_estimate: f64 },

    /// Derivative or configuration degenerate where the construction needs it nonzero.
    #[error("degeneracy: {0}")]
    Degeneracy(String),

    /// Documented precondition of an operation is violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Poincare section geometry failure (tangency, off-section start).
    #[error("section error: {0}")]
    Section(String),

    /// Trajectory never returned to the section within the time bound.
    #[error("no section crossing within time bound {0}")]
    Escape(f64),

    /// Query point outside the region covered by a fan evaluator.
    #[error("coverage error: {0}")]
    Coverage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
