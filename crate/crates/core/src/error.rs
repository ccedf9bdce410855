use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ensemble needs at least 2 members, got {got}")]
    EnsembleTooSmall { got: usize },

    #[error("member index {index} out of range for ensemble of size {len}")]
    MemberIndex { index: usize, len: usize },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("insufficient training data: need at least {needed} transitions, have {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("training diverged (non-finite loss) in ensemble member {member}")]
    DivergedLoss { member: usize },

    #[error("noise sequence exhausted at step {cursor}; call reset at episode start")]
    NoiseExhausted { cursor: usize },

    #[error("model normalizer not fitted; train the ensemble first")]
    UntrainedModel,

    #[error("no start states inside the trusted region")]
    NoStartStates,

    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
