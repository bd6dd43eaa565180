use std::fmt;

use thiserror::Error;

/// A failed structural constraint: `n` must equal the product of the
/// kernel lengths (non-overlapping) or satisfy the stride identity
/// (overlapping).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureViolation {
    pub n: usize,
    /// Value the constraint produced in place of `n` (product of kernel
    /// lengths, or the stride-identity right-hand side).
    pub derived: i128,
    /// Rendered layer list, e.g. `[2, 5]` or `[(3, 2)]`.
    pub layers: String,
    pub rule: &'static str,
}

impl fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated: n = {} but the layer list {} yields {}",
            self.rule, self.n, self.layers, self.derived
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("structure error: {0}")]
    Violation(StructureViolation),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Prefix the message with context, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::Structure(m) => Error::Structure(format!("{ctx}: {m}")),
            Error::Parameter(m) => Error::Parameter(format!("{ctx}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{ctx}: {m}")),
            Error::Unsupported(m) => Error::Unsupported(format!("{ctx}: {m}")),
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{ctx}: {message}"),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
