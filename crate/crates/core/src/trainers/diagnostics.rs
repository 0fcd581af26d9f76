use crate::exec::Execution;
use crate::models::{PolicyModel, Sampling};
use crate::numerics::Prng;

use super::TrainError;

/// `beta * (log π(y|x) - log π_ref(y|x))`.
pub fn implicit_reward(
    policy: &PolicyModel,
    reference: &PolicyModel,
    beta: f64,
    x: &[usize],
    y: &[usize],
) -> Result<f64, TrainError> {
    if policy.arch() != reference.arch() {
        return Err(TrainError::ArchMismatch);
    }
    let lp = policy.sequence_log_prob(x, y)?;
    let lr = reference.sequence_log_prob(x, y)?;
    Ok(beta * (lp - lr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub mean: f64,
    /// Standard error of the mean (0 for a single sample).
    pub se: f64,
    pub samples: usize,
}

/// Mean of `log π(y|x) - log π_ref(y|x)` over `y ~ π(.|x)`, `n_samples`
/// per prompt. Sample `j` of prompt `i` draws from `rng.stream(i).stream(j)`.
pub fn kl_diagnostic(
    policy: &PolicyModel,
    reference: &PolicyModel,
    prompts: &[Vec<usize>],
    n_samples: usize,
    rng: &Prng,
) -> Result<KlEstimate, TrainError> {
    if policy.arch() != reference.arch() {
        return Err(TrainError::ArchMismatch);
    }
    if n_samples == 0 || prompts.is_empty() {
        return Err(TrainError::Empty);
    }
    let per_prompt = Execution::auto().try_map(prompts.len(), |i| -> Result<Vec<f64>, TrainError> {
        let x = &prompts[i];
        let stream = rng.stream(i as u64);
        (0..n_samples)
            .map(|j| {
                let y = policy.sample_response(x, Sampling::default(), &mut stream.stream(j as u64))?;
                Ok(policy.sequence_log_prob(x, &y)? - reference.sequence_log_prob(x, &y)?)
            })
            .collect()
    })?;
    let values: Vec<f64> = per_prompt.into_iter().flatten().collect();
    let (mean, se) = mean_and_se(&values);
    Ok(KlEstimate {
        mean,
        se,
        samples: values.len(),
    })
}

/// Sample mean and standard error (n - 1 denominator; 0 when n = 1).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
