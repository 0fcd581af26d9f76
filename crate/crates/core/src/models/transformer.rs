//! Shared causal transformer backbone.
//!
//! Pre-norm blocks with single-head causal attention and a two-layer
//! feed-forward, followed by a final layer norm. Output is the `[T, d]`
//! hidden state; policy and reward heads sit on top of it.

use crate::numerics::{Graph, NodeId};

use super::params::PER_BLOCK;
use super::{ModelArch, ModelError, Nonlinearity};

pub(crate) fn backbone_forward(
    g: &mut Graph,
    arch: &ModelArch,
    p: &[NodeId],
    tokens: &[usize],
) -> Result<NodeId, ModelError> {
    let t = tokens.len();
    if t == 0 {
        return Err(ModelError::EmptyPrefix);
    }
    if t > arch.max_seq_len() {
        return Err(ModelError::SequenceTooLong {
            len: t,
            max: arch.max_seq_len(),
        });
    }
    arch.check_tokens(tokens)?;

    let tok = g.embed(p[0], tokens)?;
    let pos = g.slice_rows(p[1], 0, t)?;
    let mut h = g.add(tok, pos)?;
    let attn_scale = 1.0 / (arch.embed_dim as f64).sqrt();

    for b in 0..arch.n_blocks {
        let w = &p[2 + b * PER_BLOCK..2 + (b + 1) * PER_BLOCK];
        let a = g.layer_norm(h, w[0], w[1])?;
        let q = g.matmul(a, w[2])?;
        let k = g.matmul(a, w[3])?;
        let v = g.matmul(a, w[4])?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, attn_scale);
        let attn = g.softmax(scores, true)?;
        let mixed = g.matmul(attn, v)?;
        let o = g.matmul(mixed, w[5])?;
        h = g.add(h, o)?;

        let f = g.layer_norm(h, w[6], w[7])?;
        let u = g.matmul(f, w[8])?;
        let u = g.add_row(u, w[9])?;
        let u = match arch.nonlinearity {
            Nonlinearity::Tanh => g.tanh(u),
            Nonlinearity::Relu => g.relu(u),
        };
        let u = g.matmul(u, w[10])?;
        let u = g.add_row(u, w[11])?;
        h = g.add(h, u)?;
    }
    let base = 2 + arch.n_blocks * PER_BLOCK;
    Ok(g.layer_norm(h, p[base], p[base + 1])?)
}
