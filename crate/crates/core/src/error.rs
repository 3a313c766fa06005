use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum IalmError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("reference solution not certified: {0}")]
    ReferenceNotCertified(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

pub type Result<T> = std::result::Result<T, IalmError>;

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(IalmError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> IalmError {
    IalmError::InvalidParameter(msg.into())
}
