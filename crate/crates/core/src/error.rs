use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is outside its allowed range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("invalid raster {path}: {reason}")]
    Raster { path: PathBuf, reason: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err($crate::error::Error::$variant(format!($($arg)+)));
            }
        }
    };
}
pub(crate) use ensure;
