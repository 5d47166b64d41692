//! Exit-code mapping.
//!
//! 0 success, 1 numeric or training failure, 2 bad arguments or labels,
//! 3 I/O (including unreadable WAV files), 4 model-format errors.

use std::fmt;
use std::path::{Path, PathBuf};

use tdnn_kws::Error;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;

/// Errors raised by the CLI itself rather than the library.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, .. } => write!(f, "{}", path.display()),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            CliError::Usage(_) => None,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

pub fn io_err(path: &Path, source: std::io::Error) -> anyhow::Error {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

/// Writes one line to stdout, reporting a closed pipe as an error instead of panicking.
pub fn say(line: impl fmt::Display) -> anyhow::Result<()> {
    use std::io::Write;
    writeln!(std::io::stdout().lock(), "{line}").map_err(|e| io_err(Path::new("<stdout>"), e))
}

/// True when the failure is only the reader closing our stdout early.
pub fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

pub fn read_to_string(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn library_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Wav { .. } => EXIT_IO,
        Error::Format(_) => EXIT_FORMAT,
        Error::Numeric(_) | Error::Divergence { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Io { .. } => EXIT_IO,
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return library_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}
