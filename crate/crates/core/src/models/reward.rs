use crate::numerics::{Graph, NodeId, Prng, Tensor};

use super::params::{backbone_len, check_layout, init_params, layout, Head};
use super::policy::prompt_sequence;
use super::transformer::backbone_forward;
use super::{ModelArch, ModelError, ParamSet, PolicyModel};

/// Backbone plus a scalar linear head on the final-position hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    arch: ModelArch,
    params: ParamSet,
}

impl RewardModel {
    /// Seeded Gaussian backbone; the scalar head starts at exactly zero.
    pub fn init(arch: ModelArch, std: f64, rng: &mut Prng) -> Result<Self, ModelError> {
        arch.validate()?;
        let params = init_params(&arch, Head::Reward, std, rng);
        Ok(Self { arch, params })
    }

    /// Gaussian everywhere, head included. Used for frozen neural
    /// ground-truth rewards.
    pub fn random(arch: ModelArch, std: f64, rng: &mut Prng) -> Result<Self, ModelError> {
        let mut m = Self::init(arch, std, rng)?;
        let n = m.params.len();
        let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
        for t in &mut m.params.tensors_mut()[n - 2..] {
            for v in t.data_mut() {
                *v = rand_distr::Distribution::sample(&normal, rng);
            }
        }
        Ok(m)
    }

    /// Copies the backbone of `policy` and attaches a zero head.
    pub fn from_policy_backbone(policy: &PolicyModel) -> Self {
        let arch = policy.arch().clone();
        let (names, tensors) = policy.backbone();
        let mut names = names.to_vec();
        let mut tensors = tensors.to_vec();
        for (name, shape, _) in layout(&arch, Head::Reward).into_iter().skip(backbone_len(&arch)) {
            names.push(name);
            tensors.push(Tensor::zeros(&shape));
        }
        Self {
            arch,
            params: ParamSet::new(names, tensors),
        }
    }

    pub fn from_params(arch: ModelArch, params: ParamSet) -> Result<Self, ModelError> {
        arch.validate()?;
        check_layout(&arch, Head::Reward, &params)?;
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

    /// `r(x, y)` as a scalar graph node; tokens after the first EOS in `y`
    /// are ignored.
    pub fn score_on_graph(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        x: &[usize],
        y: &[usize],
    ) -> Result<NodeId, ModelError> {
        self.arch.check_prompt(x)?;
        let y = self.arch.response_through_eos(y)?;
        let seq = prompt_sequence(x, y);
        let h = backbone_forward(g, &self.arch, bound, &seq)?;
        let last = g.slice_rows(h, seq.len() - 1, seq.len())?;
        let n = bound.len();
        let r = g.matmul(last, bound[n - 2])?;
        let r = g.add_row(r, bound[n - 1])?;
        Ok(g.sum(r))
    }

    pub fn score(&self, x: &[usize], y: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let r = self.score_on_graph(&mut g, &bound, x, y)?;
        Ok(g.scalar(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::EOS;

    fn arch() -> ModelArch {
        ModelArch {
            vocab_size: 10,
            max_prompt_len: 4,
            max_response_len: 4,
            embed_dim: 8,
            ff_hidden: 8,
            ..ModelArch::default()
        }
    }

    #[test]
    fn zero_head_scores_zero() {
        let m = RewardModel::init(arch(), 0.3, &mut Prng::new(1)).unwrap();
        for y in [vec![EOS], vec![3, 4, EOS], vec![9, 9, 9, 9, EOS]] {
            assert_eq!(m.score(&[2, 5], &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn padding_after_eos_is_inert() {
        let m = RewardModel::random(arch(), 0.3, &mut Prng::new(2)).unwrap();
        let a = m.score(&[2, 5], &[3, 4, EOS]).unwrap();
        let b = m.score(&[2, 5], &[3, 4, EOS, 0, 0]).unwrap();
        let c = m.score(&[2, 5], &[3, 4, EOS, 7, 8]).unwrap();
        assert_ne!(a, 0.0);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn backbone_copy_keeps_policy_weights() {
        let p = PolicyModel::init(arch(), 0.3, &mut Prng::new(3)).unwrap();
        let r = RewardModel::from_policy_backbone(&p);
        assert_eq!(r.params().get("tok_emb"), p.params().get("tok_emb"));
        assert_eq!(r.params().get("head.weight").unwrap().data(), &vec![0.0; 8][..]);
        RewardModel::from_params(arch(), r.params().clone()).unwrap();
    }

    #[test]
    fn out_of_range_token_errors() {
        let m = RewardModel::init(arch(), 0.3, &mut Prng::new(4)).unwrap();
        assert!(matches!(
            m.score(&[2], &[10, EOS]),
            Err(ModelError::TokenOutOfRange { .. })
        ));
    }
}
