use thiserror::Error;

/// Library-wide error type. The CLI maps variants to exit codes:
/// data problems -> 2, numeric failures -> 3, configuration -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("enumeration too large: {size} assignment points exceed cap {cap}")]
    EnumerationTooLarge { size: num_bigint::BigUint, cap: num_bigint::BigUint },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidDesign(_) | Error::InvalidData(_) | Error::Io(_) => 2,
            Error::Numeric(_) | Error::EnumerationTooLarge { .. } => 3,
            Error::Config(_) => 4,
        }
    }
}
