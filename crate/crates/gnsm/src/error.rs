//! Error type shared across the crate, partitioned by exit-code class.

use thiserror::Error;

/// Crate-wide error. Variants map 1:1 onto CLI exit codes so failures
/// surface with a stable, scriptable classification.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed inputs, schema violations, broken contracts. Exit code 2.
    #[error("validation: {0}")]
    Validation(String),

    /// Filesystem or network failure. Exit code 3.
    #[error("io: {0}")]
    Io(String),

    /// Numeric breakdown: non-finite losses, degenerate fits. Exit code 4.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Artifacts that do not belong together: a checkpoint, scorer file,
    /// or dataset whose recorded hash disagrees with its counterpart.
    /// Exit code 5, so scripts can tell a stale pairing from other
    /// validation failures.
    #[error("binding: {0}")]
    Binding(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 2,
            Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            Error::Binding(_) => 5,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(format!("json: {e}"))
        } else {
            Error::Validation(format!("json: {e}"))
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(format!("csv: {e}")),
            _ => Error::Validation(format!("csv: {e}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_stable() {
        assert_eq!(Error::Validation("x".into()).exit_code(), 2);
        assert_eq!(Error::Io("x".into()).exit_code(), 3);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 4);
        assert_eq!(Error::Binding("x".into()).exit_code(), 5);
    }

    #[test]
    fn io_error_converts_to_io_class() {
        let e: Error = std::io::Error::new(std::io::ErrorKind::NotFound, "gone").into();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn malformed_json_converts_to_validation_class() {
        let e: Error = serde_json::from_str::<serde_json::Value>("{nope")
            .unwrap_err()
            .into();
        assert_eq!(e.exit_code(), 2);
    }
}
