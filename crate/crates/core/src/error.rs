use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {value} outside the domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular geometry: det J = {det:e} at t = {t:?}")]
    SingularGeometry { det: f64, t: [f64; 3] },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("invalid patch: {0}")]
    InvalidPatch(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite (p^T A p = {curvature:e} at iteration {iteration})")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("degenerate plastic deformation: det(vartheta) = {det:e}")]
    DegeneratePlasticity { det: f64 },

    #[error("inverted element: det(dy/dx) = {det:e}")]
    InvertedElement { det: f64 },

    #[error("invalid loop: {0}")]
    InvalidLoop(String),

    #[error("singular point: {0}")]
    Singularity(String),

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for malformed input: bad configuration values, unparsable files
    /// or out-of-range arguments.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Parse(_) | Error::InvalidArgument(_) | Error::Domain { .. }
        )
    }

    /// True for errors produced by an iterative solver that failed to converge.
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Indefinite { .. }
                | Error::InvertedElement { .. }
                | Error::DegeneratePlasticity { .. }
        )
    }
}
