use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr * (1 + cos(pi * step / total)) / 2` over the run's total steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// DPO only.
    pub beta: f64,
    pub shuffle: bool,
    pub schedule: Schedule,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Where to write the final model, if anywhere.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 1,
            batch_size: 64,
            seed: 0,
            beta: 0.03,
            shuffle: true,
            schedule: Schedule::Constant,
            max_steps: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale reward-model defaults: one epoch.
    pub fn reward_model() -> Self {
        Self::default()
    }

    /// Desk-scale DPO defaults: two epochs, beta 0.03.
    pub fn dpo() -> Self {
        Self {
            epochs: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(TrainError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate_dpo(&self) -> Result<(), TrainError> {
        self.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    /// Optimizer steps a run over `n` items will take.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n.div_ceil(self.batch_size);
        let total = per_epoch * self.epochs;
        self.max_steps.map_or(total, |m| m.min(total))
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_values_rejected() {
        for c in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
        let c = TrainConfig { beta: 0.0, ..TrainConfig::dpo() };
        assert!(c.validate().is_ok());
        assert!(c.validate_dpo().is_err());
    }

    #[test]
    fn steps_and_cosine() {
        let c = TrainConfig {
            batch_size: 10,
            epochs: 3,
            schedule: Schedule::Cosine,
            ..TrainConfig::default()
        };
        assert_eq!(c.total_steps(25), 9);
        assert_eq!(TrainConfig { max_steps: Some(4), ..c.clone() }.total_steps(25), 4);
        assert_eq!(c.lr_at(0, 9), 1e-3);
        assert!((c.lr_at(3, 6) - 0.5e-3).abs() < 1e-18);
    }

    #[test]
    fn json_defaults_fill_in() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 5e-6}"#).unwrap();
        assert_eq!(c.lr, 5e-6);
        assert_eq!(c.batch_size, 64);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
