use serde::{Deserialize, Serialize};

use super::ModelError;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
/// First id that is neither BOS nor EOS.
pub const FIRST_CONTENT_TOKEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArch {
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    pub max_response_len: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub ff_hidden: usize,
    pub nonlinearity: Nonlinearity,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            max_prompt_len: 8,
            max_response_len: 8,
            embed_dim: 32,
            n_blocks: 1,
            ff_hidden: 64,
            nonlinearity: Nonlinearity::Tanh,
        }
    }
}

impl ModelArch {
    /// BOS + prompt + response + EOS.
    pub fn max_seq_len(&self) -> usize {
        self.max_prompt_len + self.max_response_len + 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 4 {
            return Err(ModelError::InvalidArch(format!(
                "vocab_size must be at least 4, got {}",
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("max_prompt_len", self.max_prompt_len),
            ("max_response_len", self.max_response_len),
            ("embed_dim", self.embed_dim),
            ("n_blocks", self.n_blocks),
            ("ff_hidden", self.ff_hidden),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidArch(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<(), ModelError> {
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                token: t,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }

    pub(crate) fn check_prompt(&self, x: &[usize]) -> Result<(), ModelError> {
        if x.len() > self.max_prompt_len {
            return Err(ModelError::SequenceTooLong {
                len: x.len(),
                max: self.max_prompt_len,
            });
        }
        self.check_tokens(x)
    }

    /// Cuts `y` after its first EOS; anything beyond is padding.
    pub fn response_through_eos<'a>(&self, y: &'a [usize]) -> Result<&'a [usize], ModelError> {
        let end = y.iter().position(|&t| t == EOS).ok_or(ModelError::MissingEos)?;
        let y = &y[..=end];
        if y.len() > self.max_response_len + 1 {
            return Err(ModelError::SequenceTooLong {
                len: y.len() - 1,
                max: self.max_response_len,
            });
        }
        self.check_tokens(y)?;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let a = ModelArch::default();
        a.validate().unwrap();
        assert_eq!(a.max_seq_len(), 18);
    }

    #[test]
    fn small_vocab_rejected() {
        let a = ModelArch {
            vocab_size: 3,
            ..ModelArch::default()
        };
        assert!(a.validate().is_err());
    }

    #[test]
    fn padding_after_eos_is_cut() {
        let a = ModelArch::default();
        assert_eq!(a.response_through_eos(&[5, 6, EOS, 9, 9]).unwrap(), &[5, 6, EOS]);
        assert!(matches!(a.response_through_eos(&[5, 6]), Err(ModelError::MissingEos)));
    }
}
