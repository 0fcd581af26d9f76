use crate::numerics::{Graph, NodeId, Prng, Tensor};
use rand_distr::{Distribution, Normal};

use super::{ModelArch, ModelError};

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }

    /// Adds every parameter to `graph`, as leaves when `trainable`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.leaf(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Ones,
    Zeros,
}

/// Which output sits on top of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Head {
    Policy,
    Reward,
}

pub(crate) const PER_BLOCK: usize = 12;

pub(crate) fn layout(arch: &ModelArch, head: Head) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, h, l) = (arch.vocab_size, arch.embed_dim, arch.ff_hidden, arch.max_seq_len());
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], Init::Normal),
        ("pos_emb".to_string(), vec![l, d], Init::Normal),
    ];
    for b in 0..arch.n_blocks {
        let p = |s: &str| format!("blocks.{b}.{s}");
        out.extend([
            (p("ln1.gain"), vec![d], Init::Ones),
            (p("ln1.bias"), vec![d], Init::Zeros),
            (p("attn.wq"), vec![d, d], Init::Normal),
            (p("attn.wk"), vec![d, d], Init::Normal),
            (p("attn.wv"), vec![d, d], Init::Normal),
            (p("attn.wo"), vec![d, d], Init::Normal),
            (p("ln2.gain"), vec![d], Init::Ones),
            (p("ln2.bias"), vec![d], Init::Zeros),
            (p("ff.w1"), vec![d, h], Init::Normal),
            (p("ff.b1"), vec![h], Init::Zeros),
            (p("ff.w2"), vec![h, d], Init::Normal),
            (p("ff.b2"), vec![d], Init::Zeros),
        ]);
    }
    out.push(("ln_f.gain".to_string(), vec![d], Init::Ones));
    out.push(("ln_f.bias".to_string(), vec![d], Init::Zeros));
    match head {
        Head::Policy => {
            out.push(("out.weight".to_string(), vec![d, v], Init::Normal));
            out.push(("out.bias".to_string(), vec![v], Init::Zeros));
        }
        Head::Reward => {
            out.push(("head.weight".to_string(), vec![d, 1], Init::Zeros));
            out.push(("head.bias".to_string(), vec![1], Init::Zeros));
        }
    }
    out
}

/// Number of backbone tensors (everything before the head).
pub(crate) fn backbone_len(arch: &ModelArch) -> usize {
    2 + PER_BLOCK * arch.n_blocks + 2
}

pub(crate) fn init_params(arch: &ModelArch, head: Head, std: f64, rng: &mut Prng) -> ParamSet {
    let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let (names, tensors) = layout(arch, head)
        .into_iter()
        .map(|(name, shape, init)| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(rng)).collect(),
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            (name, Tensor::new(shape, data).expect("layout shape"))
        })
        .unzip();
    ParamSet::new(names, tensors)
}

pub(crate) fn zero_params(arch: &ModelArch, head: Head) -> ParamSet {
    let (names, tensors) = layout(arch, head)
        .into_iter()
        .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
        .unzip();
    ParamSet::new(names, tensors)
}

/// Checks that `params` has exactly the names and shapes `arch` implies.
pub(crate) fn check_layout(arch: &ModelArch, head: Head, params: &ParamSet) -> Result<(), ModelError> {
    let expected = layout(arch, head);
    if expected.len() != params.len() {
        return Err(ModelError::LayoutMismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape, _), (pn, pt)) in expected.iter().zip(params.names().iter().zip(params.tensors())) {
        if name != pn || shape.as_slice() != pt.shape() {
            return Err(ModelError::LayoutMismatch(format!(
                "expected {name} {shape:?}, found {pn} {:?}",
                pt.shape()
            )));
        }
    }
    Ok(())
}
