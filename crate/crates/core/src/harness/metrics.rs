use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::world::PreferenceDataset;

use super::{HarnessError, Scorer};

/// Pairwise ranking counts over a preference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Pairs with `r(chosen) > r(rejected)`.
    pub wins: usize,
    pub ties: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn losses(&self) -> usize {
        self.total - self.wins - self.ties
    }

    /// `(wins + ties / 2) / total`; a tie earns half credit.
    pub fn value(&self) -> f64 {
        (2 * self.wins + self.ties) as f64 / (2 * self.total) as f64
    }
}

pub fn pairwise_counts(exec: Execution, r: &dyn Scorer, set: &PreferenceDataset) -> Result<Accuracy, HarnessError> {
    if set.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let outcomes = exec.try_map(set.len(), |i| -> Result<std::cmp::Ordering, HarnessError> {
        let p = &set.pairs[i];
        let rw = r.score(&p.prompt, &p.chosen)?;
        let rl = r.score(&p.prompt, &p.rejected)?;
        rw.partial_cmp(&rl).ok_or(HarnessError::NonFiniteScore)
    })?;
    let wins = outcomes.iter().filter(|o| o.is_gt()).count();
    let ties = outcomes.iter().filter(|o| o.is_eq()).count();
    Ok(Accuracy {
        wins,
        ties,
        total: set.len(),
    })
}

/// Fraction of pairs ranked correctly, ties counting one half.
pub fn pairwise_accuracy(r: &dyn Scorer, set: &PreferenceDataset) -> Result<f64, HarnessError> {
    Ok(pairwise_counts(Execution::auto(), r, set)?.value())
}
