use alloc::string::String;
use core::fmt;

/// Error type shared by every module in the crate. Variants carry the failing
/// operation and a human-readable detail naming the offending values, so a
/// caller can both match on the class of failure and surface the message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor or grid shapes incompatible with the requested operation.
    Shape { op: &'static str, detail: String },
    /// Invalid configuration or argument value.
    Invalid { op: &'static str, detail: String },
    /// NaN or infinity where a finite value is required.
    NonFinite { op: &'static str, detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: String) -> Self {
        Error::Shape { op, detail }
    }

    pub fn invalid(op: &'static str, detail: String) -> Self {
        Error::Invalid { op, detail }
    }

    pub fn non_finite(op: &'static str, detail: String) -> Self {
        Error::NonFinite { op, detail }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::Invalid { op, detail } => write!(f, "{op}: invalid argument: {detail}"),
            Error::NonFinite { op, detail } => write!(f, "{op}: non-finite value: {detail}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
