use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::models::{ModelArch, FIRST_CONTENT_TOKEN};

use super::WorldError;

/// First-order Markov chain over content tokens with Dirichlet rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSpec {
    /// Seeds the transition matrix, not the prompts drawn from it.
    pub seed: u64,
    pub alpha: f64,
    pub length: usize,
    /// Restrict prompts to these content tokens (all content tokens when
    /// absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PromptSource {
    Markov(MarkovSpec),
    /// Draws from `alt` with probability `weight`, else from `base`.
    Mixture {
        base: Box<PromptSource>,
        alt: Box<PromptSource>,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseSource {
    /// Frozen randomly initialized policy.
    Teacher { seed: u64, init_std: f64, temperature: f64 },
    /// Policy checkpoint, e.g. a DPO-improved teacher.
    Policy { checkpoint: PathBuf, temperature: f64 },
    Mixture {
        base: Box<ResponseSource>,
        alt: Box<ResponseSource>,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruthSpec {
    /// `w_good * #good + w_bad * #bad + w_len * len + w_cooc * #(response
    /// tokens also in the prompt)`, counted over content tokens of `y`.
    FeatureLinear {
        good_tokens: Vec<usize>,
        bad_tokens: Vec<usize>,
        w_good: f64,
        w_bad: f64,
        #[serde(default)]
        w_len: f64,
        #[serde(default)]
        w_cooc: f64,
    },
    /// Frozen randomly initialized reward model.
    Neural { seed: u64, init_std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    StochasticBt,
    DeterministicArgmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    #[serde(default)]
    pub arch: ModelArch,
    pub prompts: PromptSource,
    pub responses: ResponseSource,
    pub ground_truth: GroundTruthSpec,
    pub labeling: Labeling,
    /// Seeds dataset sampling.
    pub seed: u64,
}

impl Default for WorldSpec {
    /// Feature-linear, noise-free world over the default architecture:
    /// tokens 2..=9 are good, 10..=17 bad.
    fn default() -> Self {
        Self {
            arch: ModelArch::default(),
            prompts: PromptSource::Markov(MarkovSpec {
                seed: 11,
                alpha: 0.5,
                length: 6,
                support: None,
            }),
            responses: ResponseSource::Teacher {
                seed: 12,
                init_std: 0.5,
                temperature: 1.0,
            },
            ground_truth: GroundTruthSpec::FeatureLinear {
                good_tokens: (2..10).collect(),
                bad_tokens: (10..18).collect(),
                w_good: 1.0,
                w_bad: -1.0,
                w_len: 0.0,
                w_cooc: 0.0,
            },
            labeling: Labeling::DeterministicArgmax,
            seed: 0,
        }
    }
}

fn check_weight(weight: f64) -> Result<(), WorldError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(WorldError::InvalidSpec(format!("mixture weight {weight} outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_content_tokens(what: &str, tokens: &[usize], vocab: usize) -> Result<(), WorldError> {
    let mut seen = BTreeSet::new();
    for &t in tokens {
        if !(FIRST_CONTENT_TOKEN..vocab).contains(&t) {
            return Err(WorldError::InvalidSpec(format!(
                "{what}: token {t} is not a content token of a {vocab}-token vocabulary"
            )));
        }
        if !seen.insert(t) {
            return Err(WorldError::InvalidSpec(format!("{what}: duplicate token {t}")));
        }
    }
    Ok(())
}

impl PromptSource {
    fn validate(&self, arch: &ModelArch) -> Result<(), WorldError> {
        match self {
            PromptSource::Markov(m) => {
                if !(m.alpha > 0.0 && m.alpha.is_finite()) {
                    return Err(WorldError::InvalidSpec(format!("alpha must be positive, got {}", m.alpha)));
                }
                if m.length == 0 || m.length > arch.max_prompt_len {
                    return Err(WorldError::InvalidSpec(format!(
                        "prompt length {} outside 1..={}",
                        m.length, arch.max_prompt_len
                    )));
                }
                if let Some(support) = &m.support {
                    if support.is_empty() {
                        return Err(WorldError::InvalidSpec("empty prompt support".into()));
                    }
                    check_content_tokens("prompt support", support, arch.vocab_size)?;
                }
                Ok(())
            }
            PromptSource::Mixture { base, alt, weight } => {
                check_weight(*weight)?;
                base.validate(arch)?;
                alt.validate(arch)
            }
        }
    }
}

impl ResponseSource {
    fn validate(&self) -> Result<(), WorldError> {
        let check_temp = |t: f64| {
            if t > 0.0 && t.is_finite() {
                Ok(())
            } else {
                Err(WorldError::InvalidSpec(format!("temperature must be positive, got {t}")))
            }
        };
        match self {
            ResponseSource::Teacher {
                init_std, temperature, ..
            } => {
                if !(*init_std >= 0.0 && init_std.is_finite()) {
                    return Err(WorldError::InvalidSpec(format!("teacher init_std must be >= 0, got {init_std}")));
                }
                check_temp(*temperature)
            }
            ResponseSource::Policy { temperature, .. } => check_temp(*temperature),
            ResponseSource::Mixture { base, alt, weight } => {
                check_weight(*weight)?;
                base.validate()?;
                alt.validate()
            }
        }
    }
}

impl GroundTruthSpec {
    fn validate(&self, arch: &ModelArch) -> Result<(), WorldError> {
        match self {
            GroundTruthSpec::FeatureLinear {
                good_tokens,
                bad_tokens,
                w_good,
                w_bad,
                w_len,
                w_cooc,
            } => {
                check_content_tokens("good tokens", good_tokens, arch.vocab_size)?;
                check_content_tokens("bad tokens", bad_tokens, arch.vocab_size)?;
                if let Some(t) = good_tokens.iter().find(|t| bad_tokens.contains(t)) {
                    return Err(WorldError::InvalidSpec(format!("token {t} is both good and bad")));
                }
                if ![w_good, w_bad, w_len, w_cooc].iter().all(|w| w.is_finite()) {
                    return Err(WorldError::InvalidSpec("feature weights must be finite".into()));
                }
                Ok(())
            }
            GroundTruthSpec::Neural { init_std, .. } => {
                if !(*init_std >= 0.0 && init_std.is_finite()) {
                    return Err(WorldError::InvalidSpec(format!("init_std must be >= 0, got {init_std}")));
                }
                Ok(())
            }
        }
    }
}

impl WorldSpec {
    /// Checks everything that can be checked without touching the file
    /// system.
    pub fn validate(&self) -> Result<(), WorldError> {
        self.arch.validate()?;
        self.prompts.validate(&self.arch)?;
        self.responses.validate()?;
        self.ground_truth.validate(&self.arch)
    }
}
