//! Reference-policy MLE, explicit reward-model NLL and DPO training, plus
//! the implicit reward and a Monte-Carlo KL diagnostic.

mod config;
mod diagnostics;
mod losses;
mod run;

pub use config::{Schedule, TrainConfig};
pub use diagnostics::{implicit_reward, kl_diagnostic, mean_and_se, KlEstimate};
pub use losses::{dpo_loss, mle_loss, reward_nll_loss, LossAndGrad, LossBreakdown};
pub use run::{train_dpo, train_dpo_from, train_reference_mle, train_reward_model, Trace, TraceRow, Trained};

use crate::models::{CheckpointError, ModelError};
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch or dataset")]
    Empty,
    #[error("policy and reference have different architectures")]
    ArchMismatch,
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
