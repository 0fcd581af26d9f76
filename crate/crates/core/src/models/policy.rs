use serde::{Deserialize, Serialize};

use crate::numerics::{softmax_row, Graph, NodeId, Prng, Tensor};

use super::params::{backbone_len, check_layout, init_params, zero_params, Head};
use super::transformer::backbone_forward;
use super::{ModelArch, ModelError, ParamSet, BOS, EOS};

/// Added to the BOS logit: BOS only ever opens a sequence, so the model
/// never emits it (`exp` of this underflows to exactly zero).
pub const MASKED_LOGIT: f64 = -1e9;

/// Causal next-token model over the world's vocabulary; BOS is excluded from
/// the output distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    arch: ModelArch,
    params: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    /// Argmax decoding; stands in for the temperature -> 0 limit.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            greedy: false,
        }
    }
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            temperature: 1.0,
            greedy: true,
        }
    }
}

pub(crate) fn prompt_sequence(x: &[usize], y: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(1 + x.len() + y.len());
    seq.push(BOS);
    seq.extend_from_slice(x);
    seq.extend_from_slice(y);
    seq
}

impl PolicyModel {
    /// Gaussian(0, `std`) weights, unit layer-norm gains, zero biases.
    pub fn init(arch: ModelArch, std: f64, rng: &mut Prng) -> Result<Self, ModelError> {
        arch.validate()?;
        let params = init_params(&arch, Head::Policy, std, rng);
        Ok(Self { arch, params })
    }

    /// Every parameter zero; the next-token distribution is uniform over
    /// all tokens but BOS.
    pub fn zeros(arch: ModelArch) -> Result<Self, ModelError> {
        arch.validate()?;
        let params = zero_params(&arch, Head::Policy);
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: ModelArch, params: ParamSet) -> Result<Self, ModelError> {
        arch.validate()?;
        check_layout(&arch, Head::Policy, &params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Backbone tensors, shared in layout with [`super::RewardModel`].
    pub fn backbone(&self) -> (&[String], &[crate::numerics::Tensor]) {
        let n = backbone_len(&self.arch);
        (&self.params.names()[..n], &self.params.tensors()[..n])
    }

    fn logits_on_graph(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        tokens: &[usize],
        from_row: usize,
    ) -> Result<NodeId, ModelError> {
        let h = backbone_forward(g, &self.arch, bound, tokens)?;
        let h = if from_row > 0 {
            g.slice_rows(h, from_row, tokens.len())?
        } else {
            h
        };
        let n = bound.len();
        let logits = g.matmul(h, bound[n - 2])?;
        let logits = g.add_row(logits, bound[n - 1])?;
        let mut mask = vec![0.0; self.arch.vocab_size];
        mask[BOS] = MASKED_LOGIT;
        let mask = g.constant(Tensor::vector(mask));
        Ok(g.add_row(logits, mask)?)
    }

    /// Logits for the token following `prefix`.
    pub fn next_token_logits(&self, prefix: &[usize]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let last = prefix.len().saturating_sub(1);
        let logits = self.logits_on_graph(&mut g, &bound, prefix, last)?;
        Ok(Tensor::vector(g.value(logits).data().to_vec()))
    }

    /// `log π(y|x)` as a graph node over `bound` parameters.
    ///
    /// `y` must contain EOS; tokens after the first EOS are ignored. A
    /// response that fills `max_response_len` ends in a forced EOS with
    /// probability one, matching [`PolicyModel::sample_response`], so the
    /// probabilities of all responses sum to one.
    pub fn log_prob_on_graph(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        x: &[usize],
        y: &[usize],
    ) -> Result<NodeId, ModelError> {
        let per_token = self.token_log_probs_on_graph(g, bound, x, y)?;
        Ok(g.sum(per_token))
    }

    fn token_log_probs_on_graph(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        x: &[usize],
        y: &[usize],
    ) -> Result<NodeId, ModelError> {
        self.arch.check_prompt(x)?;
        let y = self.arch.response_through_eos(y)?;
        // an EOS at the length cap is forced by the sampler and scored as 1
        let targets = if y.len() > self.arch.max_response_len {
            &y[..self.arch.max_response_len]
        } else {
            y
        };
        // the last target is never an input
        let seq = prompt_sequence(x, &targets[..targets.len() - 1]);
        let logits = self.logits_on_graph(g, bound, &seq, x.len())?;
        let logp = g.log_softmax(logits)?;
        Ok(g.gather(logp, targets)?)
    }

    pub fn sequence_log_prob(&self, x: &[usize], y: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let lp = self.log_prob_on_graph(&mut g, &bound, x, y)?;
        Ok(g.scalar(lp))
    }

    /// Per-token conditionals `log π(y_j | x, y_<j)`, EOS included unless it
    /// was forced by the length cap.
    pub fn token_log_probs(&self, x: &[usize], y: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let node = self.token_log_probs_on_graph(&mut g, &bound, x, y)?;
        Ok(g.value(node).data().to_vec())
    }

    /// Autoregressive sample; stops at EOS or appends EOS at the length cap.
    pub fn sample_response(
        &self,
        x: &[usize],
        sampling: Sampling,
        rng: &mut Prng,
    ) -> Result<Vec<usize>, ModelError> {
        if !sampling.greedy && !(sampling.temperature > 0.0 && sampling.temperature.is_finite()) {
            return Err(ModelError::InvalidArgument(format!(
                "temperature must be positive, got {}",
                sampling.temperature
            )));
        }
        self.arch.check_prompt(x)?;
        let mut y: Vec<usize> = Vec::with_capacity(self.arch.max_response_len + 1);
        let mut probs = vec![0.0; self.arch.vocab_size];
        while y.len() < self.arch.max_response_len {
            let logits = self.next_token_logits(&prompt_sequence(x, &y))?;
            let next = if sampling.greedy {
                argmax(logits.data())
            } else {
                let scaled: Vec<f64> = logits.data().iter().map(|l| l / sampling.temperature).collect();
                softmax_row(&scaled, &mut probs);
                rng.categorical(&probs)
            };
            y.push(next);
            if next == EOS {
                return Ok(y);
            }
        }
        y.push(EOS);
        Ok(y)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::log_softmax;

    fn small_arch(v: usize) -> ModelArch {
        ModelArch {
            vocab_size: v,
            max_prompt_len: 4,
            max_response_len: 5,
            embed_dim: 8,
            n_blocks: 1,
            ff_hidden: 12,
            ..ModelArch::default()
        }
    }

    fn random_policy(seed: u64) -> PolicyModel {
        PolicyModel::init(small_arch(8), 0.5, &mut Prng::new(seed)).unwrap()
    }

    #[test]
    fn zero_model_has_uniform_logits() {
        let m = PolicyModel::zeros(small_arch(6)).unwrap();
        let l = m.next_token_logits(&[BOS, 3, 4]).unwrap();
        assert_eq!(l.data()[BOS], MASKED_LOGIT);
        assert!(l.data()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniform_log_prob_closed_form() {
        let m = PolicyModel::zeros(small_arch(4)).unwrap();
        let lp = m.sequence_log_prob(&[2, 3], &[2, 3, EOS]).unwrap();
        // three emittable tokens
        assert!((lp + 3.295_836_866_004_329).abs() < 1e-12);
        let lp1 = m.sequence_log_prob(&[2], &[EOS]).unwrap();
        assert!((lp1 + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn causal_logits_ignore_future_tokens() {
        let m = random_policy(1);
        let mut g = Graph::new();
        let bound = m.params().bind(&mut g, false);
        let a = m.logits_on_graph(&mut g, &bound, &[BOS, 2, 3, 4, 5], 0).unwrap();
        let b = m.logits_on_graph(&mut g, &bound, &[BOS, 2, 3, 7, 6], 0).unwrap();
        let (va, vb) = (g.value(a), g.value(b));
        // rows 0..3 see only BOS,2,3
        for r in 0..3 {
            assert_eq!(va.row(r), vb.row(r));
        }
        assert_ne!(va.row(3), vb.row(3));
    }

    #[test]
    fn log_prob_matches_token_by_token_chain_rule() {
        let m = random_policy(2);
        let x = [3, 4, 2];
        let y = [5, 6, 7, EOS];
        let mut total = 0.0;
        for j in 0..y.len() {
            let prefix = prompt_sequence(&x, &y[..j]);
            let logits = m.next_token_logits(&prefix).unwrap();
            total += log_softmax(&logits).unwrap().data()[y[j]];
        }
        let lp = m.sequence_log_prob(&x, &y).unwrap();
        assert!((lp - total).abs() < 1e-12, "{lp} vs {total}");
        let parts: f64 = m.token_log_probs(&x, &y).unwrap().iter().sum();
        assert!((parts - lp).abs() < 1e-12);
    }

    #[test]
    fn missing_eos_and_bad_tokens_error() {
        let m = random_policy(3);
        assert!(matches!(m.sequence_log_prob(&[2], &[3, 4]), Err(ModelError::MissingEos)));
        assert!(matches!(
            m.next_token_logits(&[BOS, 99]),
            Err(ModelError::TokenOutOfRange { token: 99, .. })
        ));
        assert!(matches!(m.next_token_logits(&[]), Err(ModelError::EmptyPrefix)));
    }

    #[test]
    fn sampling_is_deterministic_and_terminated() {
        let m = random_policy(4);
        let a = m.sample_response(&[2, 3], Sampling::default(), &mut Prng::new(9)).unwrap();
        let b = m.sample_response(&[2, 3], Sampling::default(), &mut Prng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(*a.last().unwrap(), EOS);
        assert!(a.len() <= 6);
    }

    #[test]
    fn greedy_follows_argmax() {
        let m = random_policy(5);
        let x = [2, 4];
        let y = m.sample_response(&x, Sampling::greedy(), &mut Prng::new(0)).unwrap();
        for j in 0..y.len() {
            if j == m.arch().max_response_len {
                break;
            }
            let l = m.next_token_logits(&prompt_sequence(&x, &y[..j])).unwrap();
            assert_eq!(y[j], argmax(l.data()));
        }
    }

    #[test]
    fn response_probabilities_sum_to_one() {
        // V = 5, cap 2: enumerate every response
        let arch = ModelArch {
            vocab_size: 5,
            max_prompt_len: 2,
            max_response_len: 2,
            embed_dim: 6,
            ff_hidden: 6,
            ..ModelArch::default()
        };
        let m = PolicyModel::init(arch, 0.7, &mut Prng::new(11)).unwrap();
        let x = [3, 2];
        let mut total = m.sequence_log_prob(&x, &[EOS]).unwrap().exp();
        for a in 2..5 {
            total += m.sequence_log_prob(&x, &[a, EOS]).unwrap().exp();
            for b in 2..5 {
                total += m.sequence_log_prob(&x, &[a, b, EOS]).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        assert_eq!(m.token_log_probs(&x, &[2, 3, EOS]).unwrap().len(), 2);
    }

    #[test]
    fn bos_is_never_sampled() {
        let m = random_policy(7);
        let mut rng = Prng::new(3);
        for _ in 0..300 {
            let y = m.sample_response(&[2, 3], Sampling { temperature: 5.0, greedy: false }, &mut rng).unwrap();
            assert!(!y.contains(&BOS));
        }
        assert!(m.sequence_log_prob(&[2], &[BOS, EOS]).unwrap() < -1e8);
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let m = random_policy(6);
        let s = Sampling {
            temperature: 0.0,
            greedy: false,
        };
        assert!(m.sample_response(&[2], s, &mut Prng::new(0)).is_err());
    }
}
