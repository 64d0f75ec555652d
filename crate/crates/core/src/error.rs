use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty video")]
    EmptyVideo,

    #[error("empty audio waveform")]
    EmptyAudio,

    #[error("empty source")]
    EmptySource,

    #[error("sample rate {rate} Hz too low for a {window_ms} ms window")]
    SampleRateTooLow { rate: u32, window_ms: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token sequence has no [EOS] token")]
    MissingEos,

    #[error("label {0:?} tokenizes to an empty sequence")]
    EmptyLabel(String),

    #[error("weight schema mismatch at parameter `{name}`: {detail}")]
    SchemaMismatch { name: String, detail: String },

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),

    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("no included samples to score")]
    NoIncludedSamples,

    #[error("non-finite loss at batch {batch}: {detail}")]
    NonFiniteLoss { batch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown embedding stage `{0}`")]
    UnknownStage(String),

    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
