use rand_distr::{Distribution, Gamma};

use crate::models::FIRST_CONTENT_TOKEN;
use crate::numerics::Prng;

use super::{MarkovSpec, WorldError};

/// Resolved prompt chain. Row `i` of the transition matrix is the
/// distribution of the next state given state `i`; states map to tokens
/// through [`MarkovChain::states`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    states: Vec<usize>,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    length: usize,
}

/// One Dirichlet(alpha) draw via normalized Gamma variates.
fn dirichlet(alpha: f64, n: usize, rng: &mut Prng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        for p in &mut v {
            *p /= total;
        }
    } else {
        // every variate underflowed (tiny alpha); the limit is a vertex
        let k = rng.below(n);
        v.iter_mut().enumerate().for_each(|(i, p)| *p = if i == k { 1.0 } else { 0.0 });
    }
    v
}

impl MarkovChain {
    pub fn from_spec(spec: &MarkovSpec, vocab_size: usize) -> Result<Self, WorldError> {
        if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
            return Err(WorldError::InvalidSpec(format!("alpha must be positive, got {}", spec.alpha)));
        }
        let states = match &spec.support {
            Some(s) => {
                super::spec::check_content_tokens("prompt support", s, vocab_size)?;
                s.clone()
            }
            None => (FIRST_CONTENT_TOKEN..vocab_size).collect(),
        };
        if states.is_empty() {
            return Err(WorldError::InvalidSpec("empty prompt support".into()));
        }
        let n = states.len();
        let mut rng = Prng::new(spec.seed);
        let initial = dirichlet(spec.alpha, n, &mut rng);
        let transition = (0..n).map(|_| dirichlet(spec.alpha, n, &mut rng)).collect();
        Ok(Self {
            states,
            initial,
            transition,
            length: spec.length,
        })
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// A prompt of exactly `length` tokens; one uniform draw per token.
    pub fn sample(&self, rng: &mut Prng) -> Vec<usize> {
        let mut s = rng.categorical(&self.initial);
        let mut out = Vec::with_capacity(self.length);
        out.push(self.states[s]);
        for _ in 1..self.length {
            s = rng.categorical(&self.transition[s]);
            out.push(self.states[s]);
        }
        out
    }
}
