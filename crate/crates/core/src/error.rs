//! Error type shared by every module of the toolkit.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, SalError>;

#[derive(Debug, Error)]
pub enum SalError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SalError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SalError::Json {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        SalError::Csv {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            SalError::Config(_) => 2,
            SalError::Numerical(_) => 4,
            _ => 3,
        }
    }
}

macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::SalError::Data(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::SalError::Config(format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::SalError::Shape(format!($($arg)*)) };
}
pub(crate) use {config_err, data_err, shape_err};
