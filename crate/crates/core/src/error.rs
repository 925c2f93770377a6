use thiserror::Error;

/// Errors produced by the emulator library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical routine failed (non-convergence, loss of definiteness, non-finite output).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Iterative model training did not produce a usable model.
    #[error("training failed: {0}")]
    Training(String),

    /// A size limit would be exceeded.
    #[error("resource guard: {0}")]
    ResourceGuard(String),

    /// A file did not match the expected binary or text layout.
    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
