use std::fmt::Write as _;
use std::path::Path;

use crate::exec::Execution;
use crate::models::{save_policy, save_reward, ParamSet, PolicyModel, RewardModel};
use crate::numerics::{AdamHyper, AdamState, Prng};
use crate::world::PreferenceDataset;

use super::losses::{dpo_on, mle_on, reference_log_probs, reward_nll_on, LossAndGrad};
use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Batch loss before the update.
    pub loss: f64,
    pub grad_norm: f64,
}

/// Per-step training telemetry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// `step,loss,grad_norm` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.step, r.loss, r.grad_norm);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub trace: Trace,
}

/// Minibatch Adam over `n` items. Epoch `e` shuffles with
/// `Prng::new(seed).stream(e)`; the last batch of an epoch may be short.
fn optimize<M>(
    config: &TrainConfig,
    n: usize,
    model: &mut M,
    params: impl Fn(&mut M) -> &mut ParamSet,
    eval: impl Fn(&M, &[usize]) -> Result<LossAndGrad, TrainError>,
) -> Result<Trace, TrainError> {
    if n == 0 {
        return Err(TrainError::Empty);
    }
    let total = config.total_steps(n);
    let mut adam = AdamState::new(AdamHyper::with_lr(config.lr), params(model).tensors());
    let root = Prng::new(config.seed);
    let mut trace = Trace::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if config.shuffle {
            root.stream(epoch as u64).shuffle(&mut order);
        }
        for batch in order.chunks(config.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let lg = eval(model, batch)?;
            let loss = lg.breakdown.loss;
            if !loss.is_finite() || !lg.breakdown.grad_norm.is_finite() {
                return Err(TrainError::NonFinite { step, loss });
            }
            let lr = config.lr_at(step, total);
            adam.step_with_lr(params(model).tensors_mut(), &lg.grads, lr)?;
            trace.rows.push(TraceRow {
                step,
                loss,
                grad_norm: lg.breakdown.grad_norm,
            });
            if step % 50 == 0 {
                log::debug!("step {step}/{total} loss {loss:.6} lr {lr:e}");
            }
            step += 1;
        }
    }
    Ok(trace)
}

/// Trains `init` (usually the reference backbone with a zero head) on the
/// pairwise NLL.
pub fn train_reward_model(
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    init: RewardModel,
) -> Result<Trained<RewardModel>, TrainError> {
    config.validate()?;
    let exec = Execution::auto();
    let mut model = init;
    let trace = optimize(config, dataset.len(), &mut model, RewardModel::params_mut, |m, idx| {
        reward_nll_on(exec, m, &dataset.pairs, idx)
    })?;
    if let Some(path) = &config.checkpoint {
        save_reward(&model, config.seed, path)?;
    }
    Ok(Trained { model, trace })
}

/// DPO starting from a copy of `reference`.
pub fn train_dpo(
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    reference: &PolicyModel,
) -> Result<Trained<PolicyModel>, TrainError> {
    train_dpo_from(config, dataset, reference.clone(), reference)
}

/// DPO starting from `init` against a frozen `reference`.
pub fn train_dpo_from(
    config: &TrainConfig,
    dataset: &PreferenceDataset,
    init: PolicyModel,
    reference: &PolicyModel,
) -> Result<Trained<PolicyModel>, TrainError> {
    config.validate_dpo()?;
    if init.arch() != reference.arch() {
        return Err(TrainError::ArchMismatch);
    }
    let exec = Execution::auto();
    // the reference is frozen, so its log-probs are computed once
    let ref_lps = reference_log_probs(exec, reference, &dataset.pairs)?;
    let mut model = init;
    let trace = optimize(config, dataset.len(), &mut model, PolicyModel::params_mut, |m, idx| {
        dpo_on(exec, m, &ref_lps, &dataset.pairs, idx, config.beta)
    })?;
    if let Some(path) = &config.checkpoint {
        save_policy(&model, config.seed, path)?;
    }
    Ok(Trained { model, trace })
}

/// Maximum likelihood on `(prompt, response)` samples.
pub fn train_reference_mle(
    config: &TrainConfig,
    corpus: &[(Vec<usize>, Vec<usize>)],
    init: PolicyModel,
) -> Result<Trained<PolicyModel>, TrainError> {
    config.validate()?;
    let exec = Execution::auto();
    let mut model = init;
    let trace = optimize(config, corpus.len(), &mut model, PolicyModel::params_mut, |m, idx| {
        mle_on(exec, m, corpus, idx)
    })?;
    if let Some(path) = &config.checkpoint {
        save_policy(&model, config.seed, path)?;
    }
    Ok(Trained { model, trace })
}
