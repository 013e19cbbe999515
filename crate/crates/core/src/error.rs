use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inconsistent or unsupported configuration (wrong uncertainty kind,
    /// bad grid resolution, missing callbacks).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input outside the domain of an operation (dimension mismatch,
    /// non-symmetric matrix, degenerate parameters).
    #[error("domain error: {0}")]
    Domain(String),
    /// A non-finite value appeared where a finite one was required.
    #[error("numerical error at x = {point:?}, t = {t}: {what}")]
    Numerical {
        what: String,
        point: Vec<f64>,
        t: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
