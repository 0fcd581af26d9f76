//! Iterative DPO: sample K responses per prompt from the current policy,
//! score them with an annotator, keep the best and worst as a preference
//! pair, retrain, repeat.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::harness::Scorer;
use crate::models::{save_policy, ModelError, PolicyModel, Sampling};
use crate::numerics::{sigmoid, Prng};
use crate::trainers::{train_dpo_from, TrainConfig, TrainError};
use crate::world::{PairMeta, PreferenceDataset, PreferencePair, World, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("invalid iterative config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 responses per prompt, got {0}")]
    TooFewResponses(usize),
    #[error("annotator returned a non-finite reward")]
    NonFiniteReward,
    #[error("iteration {iteration}: every prompt had all-equal rewards, no pairs to train on")]
    EmptyIteration { iteration: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Annotator scores for each response, in input order.
pub fn annotate_k(annotator: &dyn Scorer, x: &[usize], responses: &[Vec<usize>]) -> Result<Vec<f64>, AlignError> {
    if responses.len() < 2 {
        return Err(AlignError::TooFewResponses(responses.len()));
    }
    responses.iter().map(|y| Ok(annotator.score(x, y)?)).collect()
}

/// `(chosen, rejected)` indices: the first maximum and the first minimum.
/// `None` when all rewards are equal.
pub fn select_max_min(rewards: &[f64]) -> Result<Option<(usize, usize)>, AlignError> {
    if rewards.len() < 2 {
        return Err(AlignError::TooFewResponses(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(AlignError::NonFiniteReward);
    }
    let (mut hi, mut lo) = (0, 0);
    for (i, r) in rewards.iter().enumerate() {
        if *r > rewards[hi] {
            hi = i;
        }
        if *r < rewards[lo] {
            lo = i;
        }
    }
    Ok((rewards[hi] != rewards[lo]).then_some((hi, lo)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Monte-Carlo estimate of `E[r*(x, y)]`, `x` from the world's prompts and
/// `y ~ π(.|x)` at temperature 1. Prompt `i` uses `rng.stream(i)`.
pub fn policy_true_reward(
    world: &World,
    policy: &PolicyModel,
    n_prompts: usize,
    n_samples_per_prompt: usize,
    rng: &Prng,
) -> Result<MeanSe, AlignError> {
    if n_prompts == 0 || n_samples_per_prompt == 0 {
        return Err(AlignError::InvalidConfig("evaluation counts must be at least 1".into()));
    }
    let per_prompt = Execution::auto().try_map(n_prompts, |i| -> Result<Vec<f64>, AlignError> {
        let mut r = rng.stream(i as u64);
        let x = world.sample_prompt(&mut r);
        (0..n_samples_per_prompt)
            .map(|_| {
                let y = policy.sample_response(&x, Sampling::default(), &mut r)?;
                Ok(world.true_reward(&x, &y)?)
            })
            .collect()
    })?;
    let values: Vec<f64> = per_prompt.into_iter().flatten().collect();
    let (mean, se) = crate::trainers::mean_and_se(&values);
    Ok(MeanSe { mean, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityEval {
    pub n_prompts: usize,
    pub n_samples_per_prompt: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterativeConfig {
    /// Responses sampled per prompt.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Per-iteration DPO run; a fresh optimizer each time.
    #[serde(default = "TrainConfig::dpo")]
    pub dpo: TrainConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Use the previous iterate as the reference instead of the original.
    #[serde(default)]
    pub refresh_reference: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityEval>,
}

fn default_k() -> usize {
    8
}

fn default_iterations() -> usize {
    2
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            iterations: default_iterations(),
            dpo: TrainConfig::dpo(),
            temperature: default_temperature(),
            refresh_reference: false,
            seed: 0,
            quality: None,
        }
    }
}

impl IterativeConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.k < 2 {
            return Err(AlignError::InvalidConfig(format!("k must be at least 2, got {}", self.k)));
        }
        if self.iterations == 0 {
            return Err(AlignError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(AlignError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(q) = &self.quality {
            if q.n_prompts == 0 || q.n_samples_per_prompt == 0 {
                return Err(AlignError::InvalidConfig("quality counts must be at least 1".into()));
            }
        }
        self.dpo.validate_dpo()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pairs: usize,
    /// Prompts dropped because every response scored the same.
    pub skipped: usize,
    pub mean_chosen_reward: f64,
    pub mean_rejected_reward: f64,
    pub mean_annotated_reward: f64,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_reward: Option<MeanSe>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub initial_true_reward: Option<MeanSe>,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// `π_1 .. π_T`.
    pub policies: Vec<PolicyModel>,
    /// `D_1 .. D_T`.
    pub datasets: Vec<PreferenceDataset>,
    pub manifest: Manifest,
}

/// Best-versus-worst pairs for `prompts` from `policy`'s samples.
/// Prompt `j` draws from `rng.stream(j)`. Returns the pairs in prompt order,
/// all annotator scores, and the number of skipped prompts.
pub fn collect_pairs(
    policy: &PolicyModel,
    annotator: &dyn Scorer,
    prompts: &[Vec<usize>],
    k: usize,
    temperature: f64,
    rng: &Prng,
) -> Result<(Vec<PreferencePair>, Vec<f64>, usize), AlignError> {
    let sampling = Sampling {
        temperature,
        greedy: false,
    };
    let per_prompt = Execution::auto().try_map(prompts.len(), |j| -> Result<_, AlignError> {
        let x = &prompts[j];
        let mut r = rng.stream(j as u64);
        let ys = (0..k)
            .map(|_| policy.sample_response(x, sampling, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = annotate_k(annotator, x, &ys)?;
        let pair = select_max_min(&scores)?.map(|(hi, lo)| PreferencePair {
            prompt: x.clone(),
            chosen: ys[hi].clone(),
            rejected: ys[lo].clone(),
            meta: Some(PairMeta {
                r_chosen: scores[hi],
                r_rejected: scores[lo],
                p_bt: sigmoid(scores[hi] - scores[lo]),
            }),
        });
        Ok((pair, scores))
    })?;
    let mut pairs = Vec::new();
    let mut all = Vec::new();
    let mut skipped = 0;
    for (pair, scores) in per_prompt {
        all.extend(scores);
        match pair {
            Some(p) => pairs.push(p),
            None => skipped += 1,
        }
    }
    Ok((pairs, all, skipped))
}

/// Runs `config.iterations` rounds starting from `initial`. Round `t`
/// samples from `π_{t-1}`, trains `π_t` from `π_{t-1}` against `reference`
/// (or against `π_{t-1}` with `refresh_reference`). With `out_dir`, writes
/// `iter_<t>/pairs.jsonl`, `iter_<t>/policy.ckpt` and `manifest.json`;
/// recorded paths are relative to `out_dir`.
pub fn iterate_dpo(
    config: &IterativeConfig,
    prompts: &[Vec<usize>],
    initial: PolicyModel,
    reference: &PolicyModel,
    annotator: &dyn Scorer,
    world: Option<&World>,
    out_dir: Option<&Path>,
) -> Result<IterationOutcome, AlignError> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(AlignError::InvalidConfig("prompt set is empty".into()));
    }
    if initial.arch() != reference.arch() {
        return Err(AlignError::Train(TrainError::ArchMismatch));
    }
    let quality = |policy: &PolicyModel| -> Result<Option<MeanSe>, AlignError> {
        match (world, &config.quality) {
            (Some(w), Some(q)) => Ok(Some(policy_true_reward(
                w,
                policy,
                q.n_prompts,
                q.n_samples_per_prompt,
                &Prng::new(q.seed),
            )?)),
            _ => Ok(None),
        }
    };
    let root = Prng::new(config.seed);
    let initial_true_reward = quality(&initial)?;
    let mut current = initial;
    let mut policies = Vec::with_capacity(config.iterations);
    let mut datasets = Vec::with_capacity(config.iterations);
    let mut records = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let (pairs, scores, skipped) =
            collect_pairs(&current, annotator, prompts, config.k, config.temperature, &root.stream(t as u64))?;
        if pairs.is_empty() {
            return Err(AlignError::EmptyIteration { iteration: t });
        }
        let data = PreferenceDataset::new(pairs);
        let anchor = if config.refresh_reference { current.clone() } else { reference.clone() };
        let trained = train_dpo_from(&config.dpo, &data, current.clone(), &anchor)?;
        let n = data.len() as f64;
        let meta = data.pairs.iter().map(|p| p.meta.expect("selection always sets meta"));
        let (sum_c, sum_r) = meta.fold((0.0, 0.0), |(c, r), m| (c + m.r_chosen, r + m.r_rejected));
        let mut record = IterationRecord {
            iteration: t,
            pairs: data.len(),
            skipped,
            mean_chosen_reward: sum_c / n,
            mean_rejected_reward: sum_r / n,
            mean_annotated_reward: scores.iter().sum::<f64>() / scores.len() as f64,
            final_loss: trained.trace.last_loss().unwrap_or(f64::NAN),
            dataset: None,
            checkpoint: None,
            true_reward: quality(&trained.model)?,
        };
        if let Some(dir) = out_dir {
            let rel = PathBuf::from(format!("iter_{t}"));
            std::fs::create_dir_all(dir.join(&rel))?;
            data.write_jsonl(dir.join(rel.join("pairs.jsonl")))?;
            save_policy(&trained.model, config.dpo.seed, dir.join(rel.join("policy.ckpt")))
                .map_err(TrainError::from)?;
            record.dataset = Some(rel.join("pairs.jsonl"));
            record.checkpoint = Some(rel.join("policy.ckpt"));
        }
        log::info!(
            "iteration {t}: {} pairs, {skipped} skipped, loss {:.4}",
            record.pairs,
            record.final_loss
        );
        records.push(record);
        datasets.push(data);
        current = trained.model;
        policies.push(current.clone());
    }
    let manifest = Manifest {
        initial_true_reward,
        records,
    };
    if let Some(dir) = out_dir {
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(dir.join("manifest.json"), bytes)?;
    }
    Ok(IterationOutcome {
        policies,
        datasets,
        manifest,
    })
}
