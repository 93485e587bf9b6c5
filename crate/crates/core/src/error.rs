use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; reset gradients first")]
    AlreadyBackpropagated,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("variant mismatch: checkpoint holds `{found}`, expected `{expected}`")]
    VariantMismatch { expected: String, found: String },
    #[error("unknown variant `{0}` (valid: enhance, no_multiperf, no_pretrained, test1, test2)")]
    UnknownVariant(String),
    #[error("channel `{channel}` is unavailable for variant `{variant}`")]
    ChannelUnavailable { channel: String, variant: String },
    #[error("unknown appearance index {index} (model has {count})")]
    UnknownAppearance { index: usize, count: usize },
    #[error("dataset file missing: {0}")]
    MissingFile(PathBuf),
    #[error("missing image for frame `{frame}`: {path}")]
    MissingFrame { frame: String, path: PathBuf },
    #[error("manifest parse error at line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("resolution mismatch in `{frame}`: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        frame: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("empty scene: {0}")]
    EmptyScene(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NanLoss { step: usize, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
