//! Crate-wide error type.
//!
//! Expression-level failures have their own enum ([`ExprError`](crate::expr::ExprError))
//! because the parser is reusable on its own; everything else funnels here.

use thiserror::Error;

use crate::expr::ExprError;

/// Errors produced by grid, Legendre, residual, equivalence, and reconstruction
/// operations.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Expression parse or evaluation failure.
    #[error(transparent)]
    Expr(#[from] ExprError),

    /// An expression referenced a variable the active chart cannot resolve.
    #[error("unknown variable `{name}` in chart {chart}")]
    UnknownVariable { name: String, chart: String },

    /// Grid construction or usage failure (bad bounds, axis set not matching
    /// the required chart, seed point off the lattice, ...).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// The requested grid would enumerate more points than the configured cap.
    #[error("grid would enumerate {total} points, exceeding the cap of {cap}")]
    CapExceeded { total: u128, cap: usize },

    /// Mismatched dimensions between cooperating objects.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Newton iteration exhausted its budget without meeting the tolerance.
    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The Newton Jacobian (the v-Hessian of L) became numerically singular.
    #[error("singular Jacobian in Newton solve (|det| = {det:.3e})")]
    SingularJacobian { det: f64 },

    /// A point left the domain where the operation is defined.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Reconstruction state exceeded the blow-up cap.
    #[error("solution blow-up at x = {location:?} (|u| = {norm:.3e})")]
    BlowUp { location: Vec<f64>, norm: f64 },

    /// Invalid model or operation parameters.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// No builtin model with the given name.
    #[error("unknown model `{0}` (expected nonautonomous, quadratic, or minimal_surface)")]
    UnknownModel(String),

    /// The operation needs data this evaluator cannot provide (for example
    /// derivatives of Legendre-transported coefficients).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A complete-solution-family slice failed its residual suite.
    #[error("family slice at lambda = {lambda:?} failed its HJ suite: {detail}")]
    SliceFailure { lambda: Vec<f64>, detail: String },

    /// The family Jacobian d(psi)/d(lambda) degenerated at a sampled point.
    #[error("degenerate family Jacobian at lambda = {lambda:?}, x = {x:?}, u = {u:?} (|det| = {det:.3e})")]
    DegenerateJacobian {
        lambda: Vec<f64>,
        x: Vec<f64>,
        u: Vec<f64>,
        det: f64,
    },

    /// A coverage probe could not be matched by any parameter value.
    #[error("coverage miss: no parameter reaches target {target:?} ({detail})")]
    CoverageMiss { target: Vec<f64>, detail: String },

    /// I/O failure while serializing a trace or report.
    #[error("i/o error: {0}")]
    Io(String),

    /// A grid sweep failed at a specific point; wraps the underlying error
    /// with its location (in grid-axis order).
    #[error("at grid point {location:?}: {source}")]
    AtPoint {
        location: Vec<f64>,
        source: Box<Error>,
    },
}

impl Error {
    /// The underlying error with any grid-location wrappers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
