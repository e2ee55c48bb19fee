use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in an input an error was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    /// Dotted field path inside a configuration value, e.g. `sampler.curriculum.rho0`.
    Field(String),
    /// 1-based line (and optional column) inside a file.
    Line {
        file: PathBuf,
        line: usize,
        column: Option<usize>,
    },
    File(PathBuf),
    None,
}

impl Location {
    pub fn field(path: impl Into<String>) -> Self {
        Location::Field(path.into())
    }

    pub fn line(file: &Path, line: usize) -> Self {
        Location::Line {
            file: file.to_path_buf(),
            line,
            column: None,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Field(p) => write!(f, "`{p}`"),
            Location::Line {
                file,
                line,
                column: Some(c),
            } => write!(f, "{}:{line}:{c}", file.display()),
            Location::Line { file, line, .. } => write!(f, "{}:{line}", file.display()),
            Location::File(p) => write!(f, "{}", p.display()),
            Location::None => f.write_str("<input>"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at {location}: {message}")]
    Config { location: Location, message: String },

    #[error("cost profile error: {0}")]
    Profile(String),

    #[error("data error at {location}: {message}")]
    Data { location: Location, message: String },

    #[error("unsupported format version {found} in {location} (expected {expected})")]
    Version {
        location: Location,
        found: u64,
        expected: u64,
    },

    #[error("truncated file {}: last complete record ends at line {last_good_line} (byte {last_good_offset})", .file.display())]
    Truncated {
        file: PathBuf,
        last_good_line: usize,
        last_good_offset: u64,
    },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Stable machine-readable classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Config,
    Profile,
    Data,
    Version,
    Truncated,
    Comparison,
    Report,
    Invariant,
    Io,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Config => "E_CONFIG",
            ErrorCode::Profile => "E_PROFILE",
            ErrorCode::Data => "E_DATA",
            ErrorCode::Version => "E_VERSION",
            ErrorCode::Truncated => "E_TRUNCATED",
            ErrorCode::Comparison => "E_COMPARE",
            ErrorCode::Report => "E_REPORT",
            ErrorCode::Invariant => "E_INVARIANT",
            ErrorCode::Io => "E_IO",
        }
    }
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: Location::field(path),
            message: message.into(),
        }
    }

    pub fn data(location: Location, message: impl Into<String>) -> Self {
        Error::Data {
            location,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Config { .. } => ErrorCode::Config,
            Error::Profile(_) => ErrorCode::Profile,
            Error::Data { .. } => ErrorCode::Data,
            Error::Version { .. } => ErrorCode::Version,
            Error::Truncated { .. } => ErrorCode::Truncated,
            Error::Comparison(_) => ErrorCode::Comparison,
            Error::Report(_) => ErrorCode::Report,
            Error::Invariant(_) => ErrorCode::Invariant,
            Error::Io { .. } => ErrorCode::Io,
        }
    }

    /// Process exit status used by the CLI: 2 for configuration problems,
    /// 3 for data problems, 4 for invariant violations.
    pub fn exit_status(&self) -> i32 {
        match self.code() {
            ErrorCode::Config | ErrorCode::Profile => 2,
            ErrorCode::Invariant => 4,
            _ => 3,
        }
    }
}
