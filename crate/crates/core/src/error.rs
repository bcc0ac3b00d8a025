//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solvers, estimators and forward models.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the expected size.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Parameters violate a type invariant (non-positive factor diagonal,
    /// weights off the simplex, overlapping inclusions, ...).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A matrix that must be symmetric positive definite failed to factor.
    #[error("factorization failed: {0}")]
    Factorization(String),

    /// A linear solve could not be completed.
    #[error("linear solve failed: {0}")]
    Solve(String),

    /// The potential returned a non-finite value during estimation.
    #[error("estimation failed: {context} (sample index {sample})")]
    NonFinite { context: String, sample: usize },

    /// Step-size halving hit its limit before the step could be completed.
    /// Carries the last valid flow state (time and flat parameters).
    #[error("flow stalled at t = {t}: {halvings} halvings exhausted")]
    FlowStall {
        t: f64,
        halvings: u32,
        last_params: Vec<f64>,
    },

    /// A flow step failed; wraps the underlying error with the failing time.
    #[error("flow step at t = {t} failed: {source}")]
    FlowStep {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    /// Forward model evaluation failed.
    #[error("forward model failed: {context}: {source}")]
    Forward {
        context: String,
        #[source]
        source: Box<Error>,
    },

    /// An observation point lies outside the computational mesh.
    #[error("point ({0}, {1}) is outside the mesh")]
    PointOutsideMesh(f64, f64),

    /// Mesh generation could not satisfy the resolution requirements.
    #[error("mesh refinement failed: {0}")]
    Refinement(String),

    /// Argument outside the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// Requested operation is not supported for this dimension.
    #[error("unsupported dimension {dim}: {context}")]
    UnsupportedDimension { dim: usize, context: &'static str },

    /// Unknown catalog shape name.
    #[error("unknown shape '{0}'")]
    UnknownShape(String),

    /// A boundary curve degenerated (vanishing tangent, non-positive radius).
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
}

pub type Result<T> = std::result::Result<T, Error>;
