use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown label: {0}")]
    Label(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 config, 3 dataset, 4 numerical,
    /// 5 protocol violation, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dataset(_) => 3,
            Error::InvalidInput(_)
            | Error::Shape(_)
            | Error::Domain(_)
            | Error::Contract(_)
            | Error::Label(_)
            | Error::Numerical(_) => 4,
            Error::Protocol(_) => 5,
            Error::Io(_) => 1,
        }
    }
}
