use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter `{name}` out of domain: {value} (expected {expected})")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("relative change undefined: reference score is zero")]
    UndefinedReference,

    #[error("search space of {size} sequences exceeds the bound of {bound}")]
    SearchSpaceTooLarge { size: f64, bound: f64 },

    #[error("grid of {size} points exceeds the bound of {bound}")]
    GridTooLarge { size: f64, bound: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported checkpoint version {found} (supported: {supported:?})")]
    CheckpointVersion { found: i64, supported: Vec<i64> },

    #[error("checkpoint tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    CheckpointShape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed checkpoint: {0}")]
    CheckpointMalformed(String),

    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable numeric code for each error family. Checkpoint failures get
    /// distinct codes so tooling can tell them apart.
    pub fn code(&self) -> u32 {
        match self {
            Error::InvalidInput(_) => 10,
            Error::ParameterDomain { .. } => 11,
            Error::Config(_) => 12,
            Error::DimensionMismatch { .. } => 13,
            Error::IndexOutOfRange { .. } => 14,
            Error::NonFiniteGradient { .. } => 20,
            Error::UndefinedReference => 21,
            Error::SearchSpaceTooLarge { .. } => 30,
            Error::GridTooLarge { .. } => 31,
            Error::Parse { .. } => 40,
            Error::CheckpointVersion { .. } => 50,
            Error::CheckpointShape { .. } => 51,
            Error::CheckpointMalformed(_) => 52,
            Error::ConfigMismatch(_) => 53,
            Error::Internal(_) => 90,
            Error::Io(_) => 60,
            Error::Json(_) => 61,
        }
    }
}
