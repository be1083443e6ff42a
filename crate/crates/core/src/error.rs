use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unstable: {0}")]
    Stability(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("non-finite value in payload at element {0}")]
    NonFinite(usize),

    #[error("malformed header: {0}")]
    Header(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for data/format problems, 4 for
    /// numeric and stability problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stability(_) | Error::Domain(_) => 4,
            Error::Parameter(_) => 2,
            _ => 3,
        }
    }
}
