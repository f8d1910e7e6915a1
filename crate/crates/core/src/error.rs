use std::path::PathBuf;

/// Errors produced by the quantification toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration or parameter value violates its contract.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unknown metabolite `{0}`")]
    UnknownMetabolite(String),

    /// A ppm window or grid point falls outside the available axis.
    #[error("range error: {0}")]
    Range(String),

    /// Input data violates an operation's precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Spectra and model (or two datasets) disagree about acquisition or grid.
    #[error("incompatible data: {0}")]
    Incompatible(String),

    /// A metric or ratio is mathematically undefined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("malformed {what} at {location}: {message}")]
    Format {
        what: &'static str,
        location: String,
        message: String,
    },

    #[error("unsupported {what} format version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u64,
        supported: u64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
