use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("negative transmit power {0} W")]
    NegativePower(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cut points must be strictly increasing inside (0, {layers}): {cuts:?}")]
    NonMonotoneCuts { cuts: Vec<usize>, layers: usize },

    #[error("link has zero data rate")]
    UnreachableLink,

    #[error("transmission chain is incomplete: {0}")]
    BrokenChain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("every entry is masked out")]
    AllMasked,

    #[error("no valid action at step {step}")]
    DeadEnd { step: usize },

    #[error("action {action} is not valid at step {step}")]
    InvalidAction { action: usize, step: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("reward {reward} outside [{lo}, {hi}]")]
    RewardOutOfBounds { reward: f64, lo: f64, hi: f64 },

    #[error("gradients were computed against parameter version {computed}, store is at {current}")]
    StaleGradients { computed: u64, current: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
