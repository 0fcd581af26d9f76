use crate::models::{ModelArch, ModelError, PolicyModel, RewardModel};
use crate::world::{GroundTruth, World};

/// Anything that scores a response to a prompt.
pub trait Scorer: Sync {
    fn score(&self, x: &[usize], y: &[usize]) -> Result<f64, ModelError>;
}

impl<F> Scorer for F
where
    F: Fn(&[usize], &[usize]) -> f64 + Sync,
{
    fn score(&self, x: &[usize], y: &[usize]) -> Result<f64, ModelError> {
        Ok(self(x, y))
    }
}

/// The three reward functions the lab compares behind one interface.
#[derive(Debug, Clone)]
pub enum RewardFunction {
    /// Explicit reward model.
    Explicit(RewardModel),
    /// `beta * (log π(y|x) - log π_ref(y|x))`.
    Implicit {
        policy: PolicyModel,
        reference: PolicyModel,
        beta: f64,
    },
    /// The world's true reward.
    Oracle { truth: GroundTruth, arch: ModelArch },
}

impl RewardFunction {
    pub fn implicit(policy: PolicyModel, reference: PolicyModel, beta: f64) -> Result<Self, ModelError> {
        if policy.arch() != reference.arch() {
            return Err(ModelError::ArchMismatch);
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ModelError::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(RewardFunction::Implicit {
            policy,
            reference,
            beta,
        })
    }

    pub fn oracle(world: &World) -> Self {
        RewardFunction::Oracle {
            truth: world.truth().clone(),
            arch: world.spec().arch.clone(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RewardFunction::Explicit(_) => "exrm",
            RewardFunction::Implicit { .. } => "dporm",
            RewardFunction::Oracle { .. } => "oracle",
        }
    }
}

impl Scorer for RewardFunction {
    fn score(&self, x: &[usize], y: &[usize]) -> Result<f64, ModelError> {
        match self {
            RewardFunction::Explicit(rm) => rm.score(x, y),
            RewardFunction::Implicit {
                policy,
                reference,
                beta,
            } => Ok(beta * (policy.sequence_log_prob(x, y)? - reference.sequence_log_prob(x, y)?)),
            RewardFunction::Oracle { truth, arch } => truth.reward(arch, x, y),
        }
    }
}
