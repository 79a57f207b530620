//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by geometry, collision, solver and verification routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("grazing start rejected: {0}")]
    GrazingRejected(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("corrupt data: {0}")]
    DataCorrupt(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("picard step rejected: {0}")]
    StepRejected(String),

    #[error("positivity violation: {0}")]
    PositivityViolation(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("incomplete run: {0}")]
    IncompleteRun(String),

    #[error("decay fit undefined: {0}")]
    FitUndefined(String),

    #[error("scenario validation failed:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
