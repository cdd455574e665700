//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape too small: {0}")]
    ShapeTooSmall(String),

    #[error("empty frame sequence")]
    EmptySequence,

    #[error("inconsistent frames: {0}")]
    InconsistentFrames(String),

    #[error("ROI out of bounds: {0}")]
    RoiOutOfBounds(String),

    #[error("malformed PPM: {0}")]
    MalformedPpm(String),

    #[error("missing frame index {0}")]
    MissingFrameIndex(usize),

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("batch too small: {0}")]
    BatchTooSmall(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("class {0:?} has no entries")]
    EmptyClass(String),

    #[error("empty validation set")]
    EmptyValidationSet,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("malformed ROI file: {0}")]
    MalformedRoi(String),

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Attach the identity of the sample that triggered the failure.
    pub fn for_sample(self, id: impl Into<String>) -> Self {
        Error::Sample {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
