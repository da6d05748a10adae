//! Exit-code classification.

use std::fmt;

/// Bad input from the user: unreadable files, malformed arguments or config.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check that ran to completion but did not pass (for example a gradient check).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// 2 for usage and I/O problems, 1 for numerical failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<phodeconv::Error>() {
            return match e {
                phodeconv::Error::InvalidArgument(_) | phodeconv::Error::DimensionMismatch { .. } => EXIT_USAGE,
                _ => EXIT_NUMERICAL,
            };
        }
        if cause.is::<image::ImageError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_NUMERICAL
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification() {
        let usage: anyhow::Error = UsageError::new("x").into();
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let io = std::fs::read("/definitely/not/here").context("reading");
        assert_eq!(exit_code(&io.unwrap_err()), EXIT_USAGE);
        let num: anyhow::Error = phodeconv::Error::DegenerateKernel("z".into()).into();
        assert_eq!(exit_code(&num), EXIT_NUMERICAL);
        let dims: anyhow::Error = phodeconv::Error::DimensionMismatch {
            expected: (1, 1),
            actual: (2, 2),
        }
        .into();
        assert_eq!(exit_code(&dims), EXIT_USAGE);
        assert_eq!(exit_code(&CheckFailed("grad".into()).into()), EXIT_NUMERICAL);
    }
}
