use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or order-parameter description is malformed.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical evaluation produced a non-finite value.
    #[error("evaluation failed at {location}: {detail}")]
    Evaluation { location: String, detail: String },

    /// A requested computation exceeds the built-in resource caps.
    #[error("resource limit: {0}")]
    Resource(String),

    /// An optimisation budget was exhausted before convergence.
    #[error("optimisation did not converge: {0}")]
    NotConverged(String),

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn non_finite(location: impl Into<String>, value: f64) -> Error {
    Error::Evaluation {
        location: location.into(),
        detail: format!("non-finite value {value}"),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
