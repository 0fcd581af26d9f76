use std::collections::BTreeSet;

use crate::models::{ModelArch, ModelError, RewardModel};
use crate::numerics::Prng;

use super::{GroundTruthSpec, WorldError};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLinear {
    pub good: BTreeSet<usize>,
    pub bad: BTreeSet<usize>,
    pub w_good: f64,
    pub w_bad: f64,
    pub w_len: f64,
    pub w_cooc: f64,
}

impl FeatureLinear {
    /// `[#good, #bad, len, #co-occurring]` over the content tokens of `y`
    /// (everything before the first EOS).
    pub fn features(&self, x: &[usize], content: &[usize]) -> [f64; 4] {
        let prompt: BTreeSet<usize> = x.iter().copied().collect();
        let mut f = [0.0; 4];
        for t in content {
            f[0] += self.good.contains(t) as u8 as f64;
            f[1] += self.bad.contains(t) as u8 as f64;
            f[3] += prompt.contains(t) as u8 as f64;
        }
        f[2] = content.len() as f64;
        f
    }

    pub fn reward(&self, x: &[usize], content: &[usize]) -> f64 {
        let f = self.features(x, content);
        self.w_good * f[0] + self.w_bad * f[1] + self.w_len * f[2] + self.w_cooc * f[3]
    }
}

/// The world's `r*`.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    FeatureLinear(FeatureLinear),
    Neural(RewardModel),
}

impl GroundTruth {
    pub fn from_spec(spec: &GroundTruthSpec, arch: &ModelArch) -> Result<Self, WorldError> {
        Ok(match spec {
            GroundTruthSpec::FeatureLinear {
                good_tokens,
                bad_tokens,
                w_good,
                w_bad,
                w_len,
                w_cooc,
            } => GroundTruth::FeatureLinear(FeatureLinear {
                good: good_tokens.iter().copied().collect(),
                bad: bad_tokens.iter().copied().collect(),
                w_good: *w_good,
                w_bad: *w_bad,
                w_len: *w_len,
                w_cooc: *w_cooc,
            }),
            GroundTruthSpec::Neural { seed, init_std } => {
                GroundTruth::Neural(RewardModel::random(arch.clone(), *init_std, &mut Prng::new(*seed))?)
            }
        })
    }

    /// `y` must be EOS-terminated; anything after the first EOS is ignored.
    pub fn reward(&self, arch: &ModelArch, x: &[usize], y: &[usize]) -> Result<f64, ModelError> {
        match self {
            GroundTruth::FeatureLinear(f) => {
                arch.check_prompt(x)?;
                let y = arch.response_through_eos(y)?;
                Ok(f.reward(x, &y[..y.len() - 1]))
            }
            GroundTruth::Neural(m) => m.score(x, y),
        }
    }
}
