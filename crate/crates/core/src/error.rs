use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("I/O error on {path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: u64 },

    #[error("invalid sentence on line {line}: {reason}")]
    InvalidSentence { line: usize, reason: String },

    #[error("line counts do not align: source has {src} lines, target has {tgt}{}",
        .speakers.map(|s| format!(", speakers has {s}")).unwrap_or_default())]
    Alignment {
        src: usize,
        tgt: usize,
        speakers: Option<usize>,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported language code `{0}`")]
    UnsupportedLanguage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport {
        attempts: u32,
        message: String,
        /// Indices of input lines that were not translated (empty for generation).
        untranslated: Vec<usize>,
    },

    #[error("unknown speaker `{id}` at pair {index}")]
    UnknownSpeaker { id: String, index: usize },

    #[error("pair {index} has no speaker id")]
    MissingSpeaker { index: usize },

    #[error("parse error in {what} at byte offset {offset}: {message}")]
    Parse {
        what: String,
        offset: usize,
        message: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest {0} is locked by another run (remove the .lock file if no run is active)")]
    Locked(PathBuf),
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }

    /// Returns the innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self.root(), Error::Transport { .. })
    }

    pub fn is_argument(&self) -> bool {
        matches!(
            self.root(),
            Error::Argument(_) | Error::UnsupportedLanguage(_)
        )
    }
}
