//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("empty stream: {0}")]
    EmptyStream(String),

    #[error("malformed metadata: {0}")]
    Metadata(String),

    #[error("no valid frames found in stream")]
    NoFrames,

    #[error("ogg parse error: {0}")]
    OggParse(String),

    #[error("jpeg parse error: {0}")]
    JpegParse(String),

    #[error("corrupt jpeg scan: {0}")]
    ScanCorrupt(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input")]
    EmptyInput,

    #[error("token {0} outside vocabulary 0..=256")]
    Vocab(u32),

    #[error("sequence length {len} exceeds cap {cap}")]
    Length { len: usize, cap: usize },

    #[error("invalid label: {0}")]
    Label(String),

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("encoder tool not found: {0}")]
    ToolNotFound(String),

    #[error("transcode failed (exit {status}): {detail}")]
    Transcode { status: i32, detail: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
