//! Synthetic preference worlds: prompt and response generators, the
//! ground-truth reward, the Bradley-Terry labeler and distribution shifts.
//!
//! A [`WorldSpec`] is plain serializable data. [`World::new`] resolves it
//! into samplers (transition matrices are drawn, teacher models built,
//! checkpoints loaded) and everything downstream works on the resolved
//! [`World`].

mod dataset;
mod markov;
mod shift;
mod spec;
mod truth;

use std::path::{Path, PathBuf};

pub use dataset::{build_dataset, build_dataset_with, read_world_sidecar, write_world_sidecar, PairMeta, PreferenceDataset, PreferencePair};
pub use markov::MarkovChain;
pub use shift::{apply_shift, ShiftKind, ShiftSpec};
pub use spec::{GroundTruthSpec, Labeling, MarkovSpec, PromptSource, ResponseSource, WorldSpec};
pub use truth::{FeatureLinear, GroundTruth};

use crate::models::{load_policy, CheckpointError, ModelError, PolicyModel, Sampling};
use crate::numerics::{sigmoid, Prng};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("could not draw a usable pair after {attempts} attempts: {reason}")]
    Degenerate { attempts: usize, reason: &'static str },
    #[error("dataset line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("generator checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
enum PromptGen {
    Markov(MarkovChain),
    Mixture(Box<PromptGen>, Box<PromptGen>, f64),
}

impl PromptGen {
    fn sample(&self, rng: &mut Prng) -> Vec<usize> {
        match self {
            PromptGen::Markov(chain) => chain.sample(rng),
            PromptGen::Mixture(base, alt, weight) => {
                if rng.bernoulli(*weight) {
                    alt.sample(rng)
                } else {
                    base.sample(rng)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum ResponseGen {
    Model(Box<PolicyModel>, Sampling),
    Mixture(Box<ResponseGen>, Box<ResponseGen>, f64),
}

impl ResponseGen {
    fn sample(&self, x: &[usize], rng: &mut Prng) -> Result<Vec<usize>, ModelError> {
        match self {
            ResponseGen::Model(policy, sampling) => policy.sample_response(x, *sampling, rng),
            ResponseGen::Mixture(base, alt, weight) => {
                if rng.bernoulli(*weight) {
                    alt.sample(x, rng)
                } else {
                    base.sample(x, rng)
                }
            }
        }
    }
}

/// Outcome of labeling one candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub pair: PreferencePair,
    /// Whether the first candidate was chosen.
    pub first_won: bool,
    /// Identical candidates, or equal true rewards.
    pub tie: bool,
}

/// A [`WorldSpec`] with all generators materialized.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    prompts: PromptGen,
    responses: ResponseGen,
    truth: GroundTruth,
}

impl World {
    /// Resolves relative checkpoint paths against the working directory.
    pub fn new(spec: WorldSpec) -> Result<Self, WorldError> {
        Self::resolve(spec, None)
    }

    /// Resolves relative checkpoint paths against `base_dir`.
    pub fn with_base_dir(spec: WorldSpec, base_dir: &Path) -> Result<Self, WorldError> {
        Self::resolve(spec, Some(base_dir))
    }

    fn resolve(spec: WorldSpec, base_dir: Option<&Path>) -> Result<Self, WorldError> {
        spec.validate()?;
        let prompts = resolve_prompts(&spec.prompts, &spec)?;
        let responses = resolve_responses(&spec.responses, &spec, base_dir)?;
        let truth = GroundTruth::from_spec(&spec.ground_truth, &spec.arch)?;
        Ok(Self {
            spec,
            prompts,
            responses,
            truth,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn sample_prompt(&self, rng: &mut Prng) -> Vec<usize> {
        self.prompts.sample(rng)
    }

    /// One EOS-terminated response from the world's response generator.
    pub fn sample_response(&self, x: &[usize], rng: &mut Prng) -> Result<Vec<usize>, WorldError> {
        Ok(self.responses.sample(x, rng)?)
    }

    pub fn true_reward(&self, x: &[usize], y: &[usize]) -> Result<f64, WorldError> {
        Ok(self.truth.reward(&self.spec.arch, x, y)?)
    }

    /// Labels `(y1, y2)` under the world's labeling mode.
    ///
    /// Stochastic mode picks `y1` with probability `sigmoid(r*(y1) - r*(y2))`
    /// and always consumes one uniform draw; deterministic mode picks the
    /// larger true reward, `y1` on ties.
    pub fn bt_label(&self, x: &[usize], y1: &[usize], y2: &[usize], rng: &mut Prng) -> Result<Labeled, WorldError> {
        let r1 = self.true_reward(x, y1)?;
        let r2 = self.true_reward(x, y2)?;
        let tie = r1 == r2 || self.spec.arch.response_through_eos(y1)? == self.spec.arch.response_through_eos(y2)?;
        let first_won = match self.spec.labeling {
            Labeling::StochasticBt => rng.uniform() < sigmoid(r1 - r2),
            Labeling::DeterministicArgmax => r1 >= r2,
        };
        let (chosen, rejected, rc, rr) = if first_won {
            (y1, y2, r1, r2)
        } else {
            (y2, y1, r2, r1)
        };
        Ok(Labeled {
            pair: PreferencePair {
                prompt: x.to_vec(),
                chosen: chosen.to_vec(),
                rejected: rejected.to_vec(),
                meta: Some(PairMeta {
                    r_chosen: rc,
                    r_rejected: rr,
                    p_bt: sigmoid(rc - rr),
                }),
            },
            first_won,
            tie,
        })
    }
}

fn resolve_prompts(src: &PromptSource, spec: &WorldSpec) -> Result<PromptGen, WorldError> {
    Ok(match src {
        PromptSource::Markov(m) => PromptGen::Markov(MarkovChain::from_spec(m, spec.arch.vocab_size)?),
        PromptSource::Mixture { base, alt, weight } => PromptGen::Mixture(
            Box::new(resolve_prompts(base, spec)?),
            Box::new(resolve_prompts(alt, spec)?),
            *weight,
        ),
    })
}

fn resolve_responses(src: &ResponseSource, spec: &WorldSpec, base_dir: Option<&Path>) -> Result<ResponseGen, WorldError> {
    Ok(match src {
        ResponseSource::Teacher {
            seed,
            init_std,
            temperature,
        } => {
            let teacher = PolicyModel::init(spec.arch.clone(), *init_std, &mut Prng::new(*seed))?;
            ResponseGen::Model(Box::new(teacher), Sampling {
                temperature: *temperature,
                greedy: false,
            })
        }
        ResponseSource::Policy { checkpoint, temperature } => {
            let path = match base_dir {
                Some(dir) if checkpoint.is_relative() => dir.join(checkpoint),
                _ => checkpoint.clone(),
            };
            let policy = load_policy(&path).map_err(|source| WorldError::Checkpoint {
                path: path.clone(),
                source,
            })?;
            if policy.arch() != &spec.arch {
                return Err(WorldError::InvalidSpec(format!(
                    "generator checkpoint {} has a different architecture than the world",
                    path.display()
                )));
            }
            ResponseGen::Model(Box::new(policy), Sampling {
                temperature: *temperature,
                greedy: false,
            })
        }
        ResponseSource::Mixture { base, alt, weight } => ResponseGen::Mixture(
            Box::new(resolve_responses(base, spec, base_dir)?),
            Box::new(resolve_responses(alt, spec, base_dir)?),
            *weight,
        ),
    })
}

/// Teacher policy described by a [`ResponseSource::Teacher`] spec.
pub fn teacher_policy(src: &ResponseSource, arch: &crate::models::ModelArch) -> Result<Option<PolicyModel>, WorldError> {
    match src {
        ResponseSource::Teacher { seed, init_std, .. } => {
            Ok(Some(PolicyModel::init(arch.clone(), *init_std, &mut Prng::new(*seed))?))
        }
        _ => Ok(None),
    }
}
