use std::fmt;

/// Error type shared across the crate. Each variant maps to a process exit
/// code so the CLI can translate failures uniformly: `Usage` -> 2,
/// `Data` -> 3, `Numeric` -> 4.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad invocation: unknown flags, malformed config, invalid argument
    /// combinations.
    Usage(String),
    /// Malformed or inconsistent input data: unreadable files, shape
    /// mismatches, bad headers.
    Data(String),
    /// Numerical failure: NaN/Inf produced during computation, divergence.
    Numeric(String),
    /// I/O failure while reading or writing files.
    Io(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
