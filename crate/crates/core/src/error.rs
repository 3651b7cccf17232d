use thiserror::Error;

/// Errors raised by tensor construction and graph evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

/// Errors raised by environments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("cannot step a terminated episode (t = {t})")]
    Terminated { t: usize },
    #[error("invalid action {action} for player {player}")]
    InvalidAction { player: usize, action: usize },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("event vector has length {got}, expected {expected}")]
    EventLength { got: usize, expected: usize },
    #[error("operation requires {0}")]
    Unsupported(String),
}

/// Errors raised by rollout collection and replay storage.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy expects {expected} observation features, environment provides {got}")]
    ObservationWidth { expected: usize, got: usize },
    #[error("replay partition {0} is empty")]
    EmptyBuffer(String),
    #[error("trajectory of {steps} steps exceeds buffer capacity {capacity}")]
    TooLarge { steps: usize, capacity: usize },
    #[error("mixed play requires distinct policies")]
    SamePolicy,
    #[error("could not find a valid switch time after {0} attempts")]
    NoSwitchTime(usize),
}

/// Errors raised by the trainers.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("agent {0} is frozen and cannot be trained")]
    Frozen(usize),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing frozen world-model snapshot for agent {0}")]
    MissingSnapshot(usize),
}

/// Errors raised while reading or writing population archives.
#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported archive version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("truncated weight blob {0}")]
    Truncated(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("archive error: {0}")]
    Invalid(String),
}
