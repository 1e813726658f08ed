use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("cosine score of a zero-norm vector")]
    ZeroNorm,
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric, 4 internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::NonFinite(_) | Error::ZeroNorm => 3,
            Error::Shape(_) | Error::Invariant(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroNorm => "zero_norm",
            Error::Invariant(_) => "invariant",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub(crate) fn shape_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}
