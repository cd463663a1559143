use thiserror::Error;

/// Crate-wide error type.
///
/// Variants group into three failure classes which the CLI maps to exit
/// codes: configuration (2), data/format (3), numerical (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: expected {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("data consistency error: {0}")]
    Data(String),

    #[error("config fingerprint mismatch: file has {found:#018x}, expected {expected:#018x}")]
    ConfigDrift { expected: u64, found: u64 },

    #[error("no eligible samples: the eligibility mask is empty")]
    NoEligibleSamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Index(_) | Error::Config(_) => 2,
            Error::Format(_)
            | Error::Version { .. }
            | Error::Truncated { .. }
            | Error::Data(_)
            | Error::ConfigDrift { .. }
            | Error::NoEligibleSamples
            | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
