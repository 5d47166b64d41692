use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding a `TDNNKWS1` model file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected TDNNKWS1")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload: needed {needed} bytes for {what}, {available} available")]
    Truncated {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingData(usize),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: expected {expected}, got {actual} ({context})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("label error: {0}")]
    Labels(String),
    #[error("undefined rate: {0}")]
    UndefinedRate(String),
    #[error("undefined SNR: {0}")]
    UndefinedSnr(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("model format error")]
    Format(#[from] FormatError),
    #[error("wav error in {path}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
