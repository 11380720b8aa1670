use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate distribution: sigma[{index}] is zero")]
    DegenerateDistribution { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("transition density unavailable for family `{0}`")]
    DensityUnavailable(String),

    #[error("state reset unsupported by family `{0}`")]
    ResetUnsupported(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("objective returned NaN at {point:?}")]
    NotANumber { point: Vec<f64> },

    #[error("infeasible region: every candidate scored -inf (zero-density transitions: {transitions:?})")]
    Infeasible { transitions: Vec<usize> },

    #[error("instance too large: {nodes} history nodes exceeds limit {limit}")]
    InstanceTooLarge { nodes: usize, limit: usize },

    #[error("policy undefined at reachable history {history:?}")]
    PolicyUndefined { history: Vec<usize> },

    #[error("bound vacuous: ball mass is zero")]
    BoundVacuous,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("epsilon {0} not present in sweep")]
    EpsilonNotInSweep(f64),
}

impl From<std::io::Error> for OdrError {
    fn from(e: std::io::Error) -> Self {
        OdrError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, OdrError>;
