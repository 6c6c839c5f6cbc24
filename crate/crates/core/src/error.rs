use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid architecture descriptor: {0}")]
    Descriptor(String),

    #[error("bad magic {found:?} at byte {offset}")]
    BadMagic { offset: u64, found: [u8; 4] },

    #[error("expected a {expected} file, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("unsupported format version {version} at byte {offset}")]
    Version { offset: u64, version: u8 },

    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        offset: u64,
        expected: u64,
        actual: u64,
    },

    #[error("dimension overflow at byte {offset}: {height}x{width} does not fit in memory")]
    DimensionOverflow { offset: u64, height: u32, width: u32 },

    #[error("value {value} at byte {offset} is outside [{min}, {max}]")]
    Range {
        offset: u64,
        value: f32,
        min: f32,
        max: f32,
    },

    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}

pub(crate) use arg_err;
pub(crate) use shape_err;
