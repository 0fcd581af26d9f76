//! Tiny causal transformer policy and scalar reward model, plus the
//! checkpoint file format.

mod arch;
pub mod checkpoint;
mod params;
mod policy;
mod reward;
mod transformer;

pub use arch::{ModelArch, Nonlinearity, BOS, EOS, FIRST_CONTENT_TOKEN};
pub use checkpoint::{
    load_policy, load_reward, save_policy, save_reward, Checkpoint, CheckpointError, ModelKind,
};
pub use params::ParamSet;
pub use policy::{PolicyModel, Sampling, MASKED_LOGIT};
pub use reward::RewardModel;

/// Standard deviation of the seeded Gaussian initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty prefix")]
    EmptyPrefix,
    #[error("response is not terminated by EOS")]
    MissingEos,
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("models have different architectures")]
    ArchMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}
