//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node whose parents already exist, so node order
//! is a topological order and `backward` is one reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Tensor, TensorError};

/// Additive surrogate for −∞ used when masking scores before a softmax.
pub const MASK_SURROGATE: f64 = -1e30;

/// Probabilities are clamped here before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Mul,
    SubSquare,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Binary(BinaryKind, NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Scale(NodeId, f64),
    GradScale(NodeId, f64),
    SliceCols(NodeId, usize),
    Row(NodeId, usize),
    Col(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    MaxPool(Vec<NodeId>, Vec<usize>),
    SoftmaxCols(NodeId, Vec<bool>),
    SoftmaxRows(NodeId),
    MaskFillRows(NodeId, Vec<bool>),
    CrossEntropy(NodeId, usize),
    Sum(NodeId),
    SumSquares(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    grads: Vec<Option<Vec<f64>>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A constant input; receives no parameter update.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a trainable parameter. Repeated calls with the same id
    /// return the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, node);
        node
    }

    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.param_nodes.get(&id).copied()
    }

    /// The parameter a node reads, if it is a parameter leaf.
    pub fn param_of(&self, node: NodeId) -> Option<ParamId> {
        match self.nodes[node.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("add", va, vb));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(row));
        let (m, n) = va.dims2()?;
        if vb.len() != n {
            return Err(mismatch("add_row", va, vb));
        }
        let mut out = va.clone();
        let bias = vb.data();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn elementwise_binary(
        &mut self,
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("elementwise_binary", va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match kind {
                BinaryKind::Mul => x * y,
                BinaryKind::SubSquare => (x - y) * (x - y),
            })
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Binary(kind, a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise_binary(BinaryKind::Mul, a, b)
    }

    pub fn sub_square(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.elementwise_binary(BinaryKind::SubSquare, a, b)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `factor` in the backward pass.
    pub fn grad_scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).clone();
        self.push(out, Op::GradScale(a, factor))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        if start > end || end > n {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                extent: n,
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&va.data()[i * n + start..i * n + end]);
        }
        let out = Tensor::matrix(m, w, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row `i` as a `1 x n` matrix.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        if i >= m {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                extent: m,
            });
        }
        let out = Tensor::matrix(1, n, va.data()[i * n..(i + 1) * n].to_vec())?;
        Ok(self.push(out, Op::Row(a, i)))
    }

    /// Column `j` as a `1 x m` matrix.
    pub fn col(&mut self, a: NodeId, j: usize) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        if j >= n {
            return Err(TensorError::Index {
                op: "col",
                index: j,
                extent: n,
            });
        }
        let data = (0..m).map(|i| va.data()[i * n + j]).collect();
        let out = Tensor::matrix(1, m, data)?;
        Ok(self.push(out, Op::Col(a, j)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::matrix(m, total, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("stack_rows"))?;
        let (_, n) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != n {
                return Err(mismatch("stack_rows", self.value(first), self.value(p)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec())))
    }

    /// Per-dimension maximum over a set of equally shaped tensors. The
    /// gradient of each output element goes to the first input attaining it.
    pub fn global_max_pool(&mut self, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *inputs
            .first()
            .ok_or(TensorError::Empty("global_max_pool"))?;
        let mut best = self.value(first).clone();
        let mut argmax = vec![0usize; best.len()];
        for (k, &node) in inputs.iter().enumerate().skip(1) {
            let v = self.value(node);
            if v.shape() != best.shape() {
                return Err(mismatch("global_max_pool", &best, v));
            }
            for (d, (&x, b)) in v.data().iter().zip(best.data_mut()).enumerate() {
                if x > *b {
                    *b = x;
                    argmax[d] = k;
                }
            }
        }
        Ok(self.push(best, Op::MaxPool(inputs.to_vec(), argmax)))
    }

    /// Column-wise softmax over rows; rows with `mask[i] == false` get
    /// exactly zero weight.
    pub fn softmax_cols(&mut self, e: NodeId, mask: &[bool]) -> Result<NodeId, TensorError> {
        let ve = self.value(e);
        let (n, k) = ve.dims2()?;
        if mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cols",
                lhs: ve.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::Degenerate("softmax_cols"));
        }
        let src = ve.data();
        let mut out = vec![0.0; n * k];
        for j in 0..k {
            let max = (0..n)
                .filter(|&i| mask[i])
                .map(|i| src[i * k + j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in (0..n).filter(|&i| mask[i]) {
                let w = (src[i * k + j] - max).exp();
                out[i * k + j] = w;
                total += w;
            }
            for i in (0..n).filter(|&i| mask[i]) {
                out[i * k + j] /= total;
            }
        }
        let out = Tensor::matrix(n, k, out)?;
        Ok(self.push(out, Op::SoftmaxCols(e, mask.to_vec())))
    }

    /// Row-wise softmax (one distribution per row).
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Replaces rows where `mask[i] == false` by [`MASK_SURROGATE`].
    pub fn mask_fill_rows(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId, TensorError> {
        let va = self.value(a);
        let (m, n) = va.dims2()?;
        if mask.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "mask_fill_rows",
                lhs: va.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut out = va.clone();
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                out.data_mut()[i * n..(i + 1) * n].fill(MASK_SURROGATE);
            }
        }
        Ok(self.push(out, Op::MaskFillRows(a, mask.to_vec())))
    }

    /// `−ln max(p[label], PROB_FLOOR)` for a single probability row.
    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId, TensorError> {
        let vp = self.value(probs);
        if label >= vp.len() {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: label,
                extent: vp.len(),
            });
        }
        let p = vp.data()[label].max(PROB_FLOOR);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::CrossEntropy(probs, label)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut acc = *terms.first().ok_or(TensorError::Empty("add_all"))?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`. Clears gradients of any earlier
    /// sweep first.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `id`; zero if
    /// `id` was unreachable.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let shape = self.value(id).shape().to_vec();
        match self.grads.get(id.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Gradients aligned with `store`; parameters absent from this graph or
    /// unreachable from the loss get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| match self.param_node(id) {
                Some(node) => self.grad(node),
                None => Tensor::zeros(store.get(id).shape()),
            })
            .collect()
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2().unwrap();
                let (_, n) = vb.dims2().unwrap();
                // dA = G B^T, dB = A^T G
                let bt = vb.transpose().unwrap();
                let at = va.transpose().unwrap();
                let ga = acc(grads, *a, va.len());
                matmul_into(g, bt.data(), ga, m, n, k);
                let gb = acc(grads, *b, vb.len());
                matmul_into(at.data(), g, gb, k, m, n);
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let ga = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::AddRow(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                let n = self.value(*b).len();
                let gb = acc(grads, *b, n);
                for row in g.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let n = g.len();
                match kind {
                    BinaryKind::Mul => {
                        let ga = acc(grads, *a, n);
                        for i in 0..n {
                            ga[i] += g[i] * vb[i];
                        }
                        let gb = acc(grads, *b, n);
                        for i in 0..n {
                            gb[i] += g[i] * va[i];
                        }
                    }
                    BinaryKind::SubSquare => {
                        let ga = acc(grads, *a, n);
                        for i in 0..n {
                            ga[i] += 2.0 * g[i] * (va[i] - vb[i]);
                        }
                        let gb = acc(grads, *b, n);
                        for i in 0..n {
                            gb[i] -= 2.0 * g[i] * (va[i] - vb[i]);
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let ga = acc(grads, *a, g.len());
                for (i, &y) in out.data().iter().enumerate() {
                    ga[i] += g[i] * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc(grads, *a, g.len());
                for (i, &y) in out.data().iter().enumerate() {
                    ga[i] += g[i] * y * (1.0 - y);
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    if va[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Scale(a, f) | Op::GradScale(a, f) => {
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * f;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2().unwrap();
                let (_, w) = out.dims2().unwrap();
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    add_into(
                        &mut ga[i * n + start..i * n + start + w],
                        &g[i * w..(i + 1) * w],
                    );
                }
            }
            Op::Row(a, i) => {
                let (m, n) = self.value(*a).dims2().unwrap();
                let ga = acc(grads, *a, m * n);
                add_into(&mut ga[i * n..(i + 1) * n], g);
            }
            Op::Col(a, j) => {
                let (m, n) = self.value(*a).dims2().unwrap();
                let ga = acc(grads, *a, m * n);
                for i in 0..m {
                    ga[i * n + j] += g[i];
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2().unwrap();
                    let gp = acc(grads, p, m * w);
                    for i in 0..m {
                        add_into(
                            &mut gp[i * w..(i + 1) * w],
                            &g[i * total + offset..i * total + offset + w],
                        );
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add_into(acc(grads, p, len), &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::MaxPool(inputs, argmax) => {
                for (d, &k) in argmax.iter().enumerate() {
                    let gk = acc(grads, inputs[k], g.len());
                    gk[d] += g[d];
                }
            }
            Op::SoftmaxCols(e, mask) => {
                let (n, k) = out.dims2().unwrap();
                let y = out.data();
                let ge = acc(grads, *e, n * k);
                for j in 0..k {
                    let dot: f64 = (0..n)
                        .filter(|&i| mask[i])
                        .map(|i| y[i * k + j] * g[i * k + j])
                        .sum();
                    for i in (0..n).filter(|&i| mask[i]) {
                        ge[i * k + j] += y[i * k + j] * (g[i * k + j] - dot);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (_, n) = out.dims2().unwrap();
                let ga = acc(grads, *a, g.len());
                for ((yr, gr), dr) in out.data().chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for i in 0..n {
                        dr[i] += yr[i] * (gr[i] - dot);
                    }
                }
            }
            Op::MaskFillRows(a, mask) => {
                let (_, n) = out.dims2().unwrap();
                let ga = acc(grads, *a, g.len());
                for (i, &keep) in mask.iter().enumerate() {
                    if keep {
                        add_into(&mut ga[i * n..(i + 1) * n], &g[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::CrossEntropy(probs, label) => {
                let vp = self.value(*probs);
                let p = vp.data()[*label];
                let gp = acc(grads, *probs, vp.len());
                if p > PROB_FLOOR {
                    gp[*label] -= g[0] / p;
                }
            }
            Op::Sum(a) => {
                let ga = acc(grads, *a, self.value(*a).len());
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
            Op::SumSquares(a) => {
                let va = self.value(*a).data();
                let ga = acc(grads, *a, va.len());
                for i in 0..va.len() {
                    ga[i] += 2.0 * g[0] * va[i];
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
