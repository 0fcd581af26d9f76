//! Reverse-mode automatic differentiation over a fixed primitive set.
//!
//! A [`Graph`] is an append-only list of nodes; every node's inputs are
//! created before it, so node order is a valid topological order and
//! [`Graph::backward`] is a single reverse sweep. Tensors are at most 2-D
//! inside the graph (row-major `[rows, cols]`); vectors are `[n]` and the
//! loss is a rank-0 scalar.

use super::functions::{log_sigmoid, log_softmax_row, sigmoid, softmax_row};
use super::{NumericsError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    LogSigmoid(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Gather { input: NodeId, indices: Vec<usize> },
    Embed { table: NodeId, ids: Vec<usize> },
    SliceRows { input: NodeId, start: usize },
    Sum(NodeId),
    Mean(NodeId),
    LayerNorm {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar output, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `node`; zeros when the output does not depend on it.
    pub fn get(&self, node: NodeId) -> Tensor {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[node.0]),
        }
    }

    pub fn take(&mut self, node: NodeId) -> Tensor {
        match self.grads[node.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[node.0]),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match t.shape().len() {
        0 => (1, 1),
        1 => (1, t.shape()[0]),
        _ => (t.rows(), t.cols()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * m..(p + 1) * m];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    /// `a[i, j] + row[j]` for a `[n, m]` matrix and an `[m]` vector.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, NumericsError> {
        let (_, m) = dims2(self.value(a));
        if self.value(row).len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                left: self.value(a).shape().to_vec(),
                right: self.value(row).shape().to_vec(),
            });
        }
        let va = self.value(a);
        let vr = self.value(row).data();
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(m) {
            for (x, r) in chunk.iter_mut().zip(vr) {
                *x += r;
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let data = matmul_raw(va.data(), vb.data(), n, k, m);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(NumericsError::InvalidArgument(format!(
                "transpose expects a matrix, got shape {:?}",
                va.shape()
            )));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let data = transpose_raw(va.data(), r, c);
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a), ng))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Elementwise `ln σ(x)`.
    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::LogSigmoid(a), log_sigmoid)
    }

    /// Row-wise softmax. With `causal`, row `i` only spans columns `0..=i`
    /// and masked entries are exactly zero.
    pub fn softmax(&mut self, a: NodeId, causal: bool) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        let (n, m) = dims2(va);
        if m == 0 {
            return Err(NumericsError::EmptyAxis);
        }
        if causal && n > m {
            return Err(NumericsError::InvalidArgument(format!(
                "causal softmax needs rows <= cols, got {n}x{m}"
            )));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let width = if causal { i + 1 } else { m };
            let src = &va.data()[i * m..i * m + width];
            softmax_row(src, &mut out[i * m..i * m + width]);
        }
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Softmax(a), ng))
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        let (_, m) = dims2(va);
        if m == 0 || va.is_empty() {
            return Err(NumericsError::EmptyAxis);
        }
        let mut out = vec![0.0; va.len()];
        for (src, dst) in va.data().chunks(m).zip(out.chunks_mut(m)) {
            log_softmax_row(src, dst);
        }
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::LogSoftmax(a), ng))
    }

    /// Picks `a[i, indices[i]]` from each row, giving an `[n]` vector.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        let (n, m) = dims2(va);
        if indices.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "gather",
                left: va.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        if let Some(bad) = indices.iter().find(|&&j| j >= m) {
            return Err(NumericsError::IndexOutOfRange { index: *bad, len: m });
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| va.data()[i * m + j])
            .collect();
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::vector(data),
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Row lookup: `table[ids[i], :]` stacked into `[ids.len(), d]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericsError> {
        let vt = self.value(table);
        let (v, d) = dims2(vt);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::IndexOutOfRange { index: id, len: v });
            }
            data.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let ng = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        let (n, m) = dims2(va);
        if start >= end || end > n {
            return Err(NumericsError::InvalidArgument(format!(
                "row slice {start}..{end} of a {n}-row matrix"
            )));
        }
        let data = va.data()[start * m..end * m].to_vec();
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![end - start, m], data)?,
            Op::SliceRows { input: a, start },
            ng,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let s: f64 = va.data().iter().sum::<f64>() / va.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Row-wise layer normalization with per-column gain and bias.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let va = self.value(a);
        let (n, m) = dims2(va);
        if self.value(gain).len() != m || self.value(bias).len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                left: va.shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &va.data()[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..m {
                let xh = (row[j] - mean) * inv;
                normalized[i * m + j] = xh;
                out[i * m + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let ng = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, NumericsError> {
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(NumericsError::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, delta: Tensor| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |id: NodeId, data: Vec<f64>| {
            Tensor::new(self.value(id).shape().to_vec(), data).expect("gradient shape")
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data().iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, g.data().iter().zip(vb).map(|(x, y)| x * y).collect()));
                acc(*b, like(*b, g.data().iter().zip(va).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, f) => acc(*a, like(*a, g.data().iter().map(|x| x * f).collect())),
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let m = self.value(*row).len();
                let mut dr = vec![0.0; m];
                for chunk in g.data().chunks(m) {
                    for (d, x) in dr.iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
                acc(*row, like(*row, dr));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.needs(*a) {
                    let bt = transpose_raw(vb.data(), k, m);
                    acc(*a, like(*a, matmul_raw(g.data(), &bt, n, m, k)));
                }
                if self.needs(*b) {
                    let at = transpose_raw(va.data(), n, k);
                    acc(*b, like(*b, matmul_raw(&at, g.data(), k, n, m)));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                acc(*a, like(*a, transpose_raw(g.data(), c, r)));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, like(*a, g.data().iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect()));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(
                    *a,
                    like(*a, g.data().iter().zip(x).map(|(d, x)| if *x > 0.0 { *d } else { 0.0 }).collect()),
                );
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a).data();
                acc(*a, like(*a, g.data().iter().zip(x).map(|(d, x)| d * sigmoid(-x)).collect()));
            }
            Op::Softmax(input) => {
                let y = &node.value;
                let m = y.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(m).zip(g.data().chunks(m)).zip(dx.chunks_mut(m)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*input, like(*input, dx));
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let m = y.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(m).zip(g.data().chunks(m)).zip(dx.chunks_mut(m)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..m {
                        dr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                acc(*a, like(*a, dx));
            }
            Op::Gather { input, indices } => {
                let m = self.value(*input).cols();
                let mut dx = vec![0.0; self.value(*input).len()];
                for (i, (&j, d)) in indices.iter().zip(g.data()).enumerate() {
                    dx[i * m + j] += d;
                }
                acc(*input, like(*input, dx));
            }
            Op::Embed { table, ids } => {
                let d = self.value(*table).cols();
                let mut dt = vec![0.0; self.value(*table).len()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g.data()[i * d + j];
                    }
                }
                acc(*table, like(*table, dt));
            }
            Op::SliceRows { input, start } => {
                let m = self.value(*input).cols();
                let mut dx = vec![0.0; self.value(*input).len()];
                dx[start * m..start * m + g.len()].copy_from_slice(g.data());
                acc(*input, like(*input, dx));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, like(*a, vec![g.item(); n]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(*a, like(*a, vec![g.item() / n as f64; n]));
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let m = self.value(*gain).len();
                let gv = self.value(*gain).data();
                let mut dgain = vec![0.0; m];
                let mut dbias = vec![0.0; m];
                let mut dx = vec![0.0; normalized.len()];
                for (i, inv) in inv_std.iter().enumerate() {
                    let gr = &g.data()[i * m..(i + 1) * m];
                    let xh = &normalized[i * m..(i + 1) * m];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..m {
                        dgain[j] += gr[j] * xh[j];
                        dbias[j] += gr[j];
                        let dxh = gr[j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let mf = m as f64;
                    for j in 0..m {
                        let dxh = gr[j] * gv[j];
                        dx[i * m + j] = inv / mf * (mf * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                acc(*input, like(*input, dx));
                acc(*gain, like(*gain, dgain));
                acc(*bias, like(*bias, dbias));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(3.0));
        let sq = g.mul(w, w).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(w).item(), 6.0);
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = g.leaf(Tensor::vector(vec![5.0, 6.0]));
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let t = g.tanh(w);
        assert!(matches!(g.backward(t), Err(NumericsError::NonScalarOutput(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 50.0, 0.0, 0.0]).unwrap());
        let s = g.softmax(a, true).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn out_of_range_ids_error() {
        let mut g = Graph::new();
        let t = g.leaf(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            g.embed(t, &[0, 4]),
            Err(NumericsError::IndexOutOfRange { index: 4, len: 4 })
        ));
    }
}
