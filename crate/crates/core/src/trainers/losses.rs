use crate::exec::Execution;
use crate::models::{PolicyModel, RewardModel};
use crate::numerics::{Graph, Tensor};
use crate::world::PreferencePair;

use super::TrainError;

/// Telemetry for one evaluation of a training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub loss: f64,
    /// Per item: `r_w - r_l` for the reward model, the log-ratio margin
    /// `(lp_w - ref_w) - (lp_l - ref_l)` for DPO; empty for MLE.
    pub margins: Vec<f64>,
    /// Mean reward gap between chosen and rejected: the explicit gap for the
    /// reward model, `beta * mean margin` (the implicit gap) for DPO.
    pub reward_gap: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub breakdown: LossBreakdown,
    /// One tensor per model parameter, in parameter order.
    pub grads: Vec<Tensor>,
}

struct ItemLoss {
    loss: f64,
    margin: f64,
    grads: Vec<Tensor>,
}

/// Mean over items, summed in index order so the result does not depend on
/// the execution mode.
fn reduce(items: Vec<ItemLoss>, has_margin: bool, gap_scale: f64) -> LossAndGrad {
    let n = items.len() as f64;
    let mut loss = 0.0;
    let mut margins = Vec::with_capacity(items.len());
    let mut iter = items.into_iter();
    let first = iter.next().expect("reduce is only called on non-empty batches");
    loss += first.loss;
    margins.push(first.margin);
    let mut grads = first.grads;
    for item in iter {
        loss += item.loss;
        margins.push(item.margin);
        for (g, d) in grads.iter_mut().zip(&item.grads) {
            g.add_assign(d);
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    let grad_norm = grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt();
    let (margins, reward_gap) = if has_margin {
        let gap = gap_scale * margins.iter().sum::<f64>() / n;
        (margins, gap)
    } else {
        (Vec::new(), 0.0)
    };
    LossAndGrad {
        breakdown: LossBreakdown {
            loss: loss / n,
            margins,
            reward_gap,
            grad_norm,
        },
        grads,
    }
}

pub(crate) fn reward_nll_on(
    exec: Execution,
    rm: &RewardModel,
    pairs: &[PreferencePair],
    idx: &[usize],
) -> Result<LossAndGrad, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::Empty);
    }
    let items = exec.try_map(idx.len(), |k| -> Result<ItemLoss, TrainError> {
        let p = &pairs[idx[k]];
        let mut g = Graph::new();
        let bound = rm.params().bind(&mut g, true);
        let rw = rm.score_on_graph(&mut g, &bound, &p.prompt, &p.chosen)?;
        let rl = rm.score_on_graph(&mut g, &bound, &p.prompt, &p.rejected)?;
        let margin = g.sub(rw, rl)?;
        let ls = g.log_sigmoid(margin);
        let loss = g.scale(ls, -1.0);
        let grads = g.backward(loss)?;
        Ok(ItemLoss {
            loss: g.scalar(loss),
            margin: g.scalar(margin),
            grads: bound.iter().map(|b| grads.get(*b)).collect(),
        })
    })?;
    Ok(reduce(items, true, 1.0))
}

/// Mean of `-log sigmoid(r(x, y_w) - r(x, y_l))` and its gradient with
/// respect to every reward-model parameter.
pub fn reward_nll_loss(exec: Execution, rm: &RewardModel, batch: &[PreferencePair]) -> Result<LossAndGrad, TrainError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    reward_nll_on(exec, rm, batch, &idx)
}

/// Reference log-probabilities `(chosen, rejected)` per pair.
pub(crate) fn reference_log_probs(
    exec: Execution,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
) -> Result<Vec<(f64, f64)>, TrainError> {
    exec.try_map(pairs.len(), |i| -> Result<(f64, f64), TrainError> {
        let p = &pairs[i];
        Ok((
            reference.sequence_log_prob(&p.prompt, &p.chosen)?,
            reference.sequence_log_prob(&p.prompt, &p.rejected)?,
        ))
    })
}

pub(crate) fn dpo_on(
    exec: Execution,
    policy: &PolicyModel,
    ref_lps: &[(f64, f64)],
    pairs: &[PreferencePair],
    idx: &[usize],
    beta: f64,
) -> Result<LossAndGrad, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::Empty);
    }
    let items = exec.try_map(idx.len(), |k| -> Result<ItemLoss, TrainError> {
        let i = idx[k];
        let p = &pairs[i];
        let (ref_w, ref_l) = ref_lps[i];
        let mut g = Graph::new();
        let bound = policy.params().bind(&mut g, true);
        let lw = policy.log_prob_on_graph(&mut g, &bound, &p.prompt, &p.chosen)?;
        let ll = policy.log_prob_on_graph(&mut g, &bound, &p.prompt, &p.rejected)?;
        let ref_w = g.constant(Tensor::scalar(ref_w));
        let ref_l = g.constant(Tensor::scalar(ref_l));
        let ratio_w = g.sub(lw, ref_w)?;
        let ratio_l = g.sub(ll, ref_l)?;
        let margin = g.sub(ratio_w, ratio_l)?;
        let z = g.scale(margin, beta);
        let ls = g.log_sigmoid(z);
        let loss = g.scale(ls, -1.0);
        let grads = g.backward(loss)?;
        Ok(ItemLoss {
            loss: g.scalar(loss),
            margin: g.scalar(margin),
            grads: bound.iter().map(|b| grads.get(*b)).collect(),
        })
    })?;
    Ok(reduce(items, true, beta))
}

/// Mean of `-log sigmoid(beta * [(lp_w - ref_w) - (lp_l - ref_l)])`, the
/// DPO objective, and its gradient with respect to the policy parameters.
pub fn dpo_loss(
    exec: Execution,
    policy: &PolicyModel,
    reference: &PolicyModel,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<LossAndGrad, TrainError> {
    if policy.arch() != reference.arch() {
        return Err(TrainError::ArchMismatch);
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(TrainError::InvalidConfig(format!("beta must be positive, got {beta}")));
    }
    let ref_lps = reference_log_probs(exec, reference, batch)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    dpo_on(exec, policy, &ref_lps, batch, &idx, beta)
}

pub(crate) fn mle_on(
    exec: Execution,
    policy: &PolicyModel,
    corpus: &[(Vec<usize>, Vec<usize>)],
    idx: &[usize],
) -> Result<LossAndGrad, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::Empty);
    }
    let items = exec.try_map(idx.len(), |k| -> Result<ItemLoss, TrainError> {
        let (x, y) = &corpus[idx[k]];
        let mut g = Graph::new();
        let bound = policy.params().bind(&mut g, true);
        let lp = policy.log_prob_on_graph(&mut g, &bound, x, y)?;
        let loss = g.scale(lp, -1.0);
        let grads = g.backward(loss)?;
        Ok(ItemLoss {
            loss: g.scalar(loss),
            margin: 0.0,
            grads: bound.iter().map(|b| grads.get(*b)).collect(),
        })
    })?;
    Ok(reduce(items, false, 0.0))
}

/// Mean sequence negative log-likelihood `-log π(y|x)` over `(x, y)` samples.
pub fn mle_loss(exec: Execution, policy: &PolicyModel, corpus: &[(Vec<usize>, Vec<usize>)]) -> Result<LossAndGrad, TrainError> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    mle_on(exec, policy, corpus, &idx)
}
