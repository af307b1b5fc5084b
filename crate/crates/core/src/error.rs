use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("unsupported Y4M chroma tag `{0}` (expected C420*, C444 or Cmono)")]
    UnsupportedChroma(String),

    #[error("malformed Y4M stream: {0}")]
    MalformedY4m(String),

    #[error("input contains no frames")]
    NoFrames,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: t_sign must be -1, 0 or 1, got {value}")]
    InvalidTSign { line: u64, value: String },

    #[error("block ({block_i}, {block_j}) outside {rows}x{cols} grid")]
    BlockOutOfGrid {
        block_i: usize,
        block_j: usize,
        rows: usize,
        cols: usize,
    },

    #[error("line {line}: rows must be strictly sorted by (frame, block_i, block_j)")]
    Unsorted { line: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate clip id `{0}`")]
    DuplicateClip(String),

    #[error("referenced file does not exist: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for internal
    /// invariant violations, 1 for everything caused by the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: PathBuf::new(),
                source,
            },
            kind => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}
