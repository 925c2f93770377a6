//! Pipelines and file tools behind the `temu` command.

pub mod config;
pub mod pipelines;
pub mod tools;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] temu::Error),

    #[error("{0}")]
    Other(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(temu::Error::Io(e))
    }
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    /// Process exit status: 2 configuration or argument errors, 3 resource
    /// guard refusals, 4 numerical or training failures, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use temu::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Argument(_)) => 2,
            CliError::Core(E::ResourceGuard(_)) => 3,
            CliError::Core(E::Numerical(_) | E::Training(_)) => 4,
            _ => 1,
        }
    }
}

pub(crate) trait Hint {
    fn with_hint(self, hint: &str) -> CliError;
}

impl Hint for temu::Error {
    fn with_hint(self, hint: &str) -> CliError {
        match self {
            temu::Error::ResourceGuard(m) => CliError::Core(temu::Error::ResourceGuard(format!("{m} ({hint})"))),
            other => CliError::Core(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Config("x".into()).exit_code(),
            CliError::Core(temu::Error::ResourceGuard("x".into())).exit_code(),
            CliError::Core(temu::Error::Numerical("x".into())).exit_code(),
            CliError::Core(temu::Error::Format("x".into())).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }

    #[test]
    fn hints_only_touch_resource_errors() {
        let e = temu::Error::ResourceGuard("too big".into()).with_hint("shrink it");
        assert!(e.to_string().contains("shrink it"));
        let e = temu::Error::Numerical("bad".into()).with_hint("shrink it");
        assert!(!e.to_string().contains("shrink it"));
    }
}
