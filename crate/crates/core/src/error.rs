use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("video shorter than stride: {frames} frames, stride {stride}")]
    VideoShorterThanStride { frames: usize, stride: usize },

    #[error("sequence length {len} exceeds positional table of {max} rows")]
    SequenceTooLong { len: usize, max: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("prediction horizon must be at least one frame")]
    EmptyHorizon,

    #[error("epoch {epoch} outside schedule range [0, {epochs})")]
    EpochOutOfRange { epoch: f64, epochs: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("corpus load error for video `{video_id}`: {reason}")]
    CorruptVideo { video_id: String, reason: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: String },

    #[error("missing checkpoint: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingCheckpoint(Vec<PathBuf>),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("refusing to overwrite non-empty directory {0} (pass --force)")]
    WouldClobber(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
