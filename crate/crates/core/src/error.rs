use thiserror::Error;

/// Errors raised by the numerics in this crate.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {context} (expected {expected}, got {actual})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("replica {replica} panicked: {message}")]
    WorkerPanic { replica: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}
