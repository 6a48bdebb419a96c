//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation records its inputs on a [`Tape`]. The vector-Jacobian
//! product of each operation is itself expressed with tape operations, so a
//! backward pass run with `create_graph = true` leaves a differentiable
//! record of the gradient computation behind. Differentiating through that
//! record yields exact higher-order derivatives, which is what the
//! meta-gradient through inner gradient steps needs.

use std::sync::Arc;

use super::tensor::{gemm, Shape, Tensor};
use super::NnetError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RepeatRows(Var),
    SumRows(Var),
    ConcatCols(Var, Var),
    SliceCols { a: Var, start: usize },
    PadCols { a: Var, start: usize },
    Reshape(Var),
    GraphAggregate { a: Var, adj: Arc<Tensor> },
    GroupSum { a: Var, k: usize },
    GroupExpand { a: Var, k: usize },
    SumAll(Var),
    Fill(Var),
}

impl Op {
    fn parents(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                [Some(a), Some(b)]
            }
            Op::ConcatCols(a, b) => [Some(a), Some(b)],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::RepeatRows(a)
            | Op::SumRows(a)
            | Op::SliceCols { a, .. }
            | Op::PadCols { a, .. }
            | Op::Reshape(a)
            | Op::GraphAggregate { a, .. }
            | Op::GroupSum { a, .. }
            | Op::GroupExpand { a, .. }
            | Op::SumAll(a)
            | Op::Fill(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub const DEFAULT_NODE_CAP: usize = 1 << 22;

/// Append-only record of a computation.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    node_cap: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_node_cap(DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(node_cap: usize) -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            node_cap,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created at or after `len`. Handles to those nodes
    /// become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Result<Var, NnetError> {
        self.param_shared(Arc::new(value))
    }

    pub fn param_shared(&mut self, value: Arc<Tensor>) -> Result<Var, NnetError> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NnetError> {
        self.constant_shared(Arc::new(value))
    }

    pub fn constant_shared(&mut self, value: Arc<Tensor>) -> Result<Var, NnetError> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        value: Arc<Tensor>,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var, NnetError> {
        if !value.is_finite() {
            return Err(NnetError::NonFinite { op: name });
        }
        if self.nodes.len() >= self.node_cap {
            return Err(NnetError::TapeCapExceeded { cap: self.node_cap });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn record(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, NnetError> {
        let rg = self.recording
            && op
                .parents()
                .iter()
                .flatten()
                .any(|p| self.nodes[p.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        self.push(Arc::new(value), op, rg, name)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NnetError> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(NnetError::ShapeMismatch {
                op,
                left: l,
                right: r,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnetError> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposition of either side.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let k_a = if ta { sa.rows } else { sa.cols };
        let k_b = if tb { sb.cols } else { sb.rows };
        if k_a != k_b {
            return Err(NnetError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = gemm(self.value(a), ta, self.value(b), tb);
        self.record("matmul", value, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnetError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.record("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnetError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.record("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnetError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.record("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NnetError> {
        let value = self.value(a).map(|x| x * c);
        self.record("scale", value, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnetError> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.record("relu", value, Op::Relu(a))
    }

    /// Repeats a `1 × m` row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if s.rows != 1 {
            return Err(NnetError::ShapeMismatch {
                op: "repeat_rows",
                left: s,
                right: Shape::new(1, s.cols),
            });
        }
        let row = self.value(a).data();
        let mut data = Vec::with_capacity(n * s.cols);
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        let value = Tensor::new(Shape::new(n, s.cols), data);
        self.record("repeat_rows", value, Op::RepeatRows(a))
    }

    /// Column sums as a `1 × m` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, NnetError> {
        let t = self.value(a);
        let Shape { rows, cols } = t.shape();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(&t.data()[r * cols..(r + 1) * cols]) {
                *o += x;
            }
        }
        self.record("sum_rows", Tensor::row(out), Op::SumRows(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnetError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rows != sb.rows {
            return Err(NnetError::ShapeMismatch {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = sa.cols + sb.cols;
        let mut data = Vec::with_capacity(sa.rows * cols);
        for r in 0..sa.rows {
            data.extend_from_slice(&ta.data()[r * sa.cols..(r + 1) * sa.cols]);
            data.extend_from_slice(&tb.data()[r * sb.cols..(r + 1) * sb.cols]);
        }
        let value = Tensor::new(Shape::new(sa.rows, cols), data);
        self.record("concat_cols", value, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if start + len > s.cols {
            return Err(NnetError::ShapeMismatch {
                op: "slice_cols",
                left: s,
                right: Shape::new(s.rows, start + len),
            });
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(s.rows * len);
        for r in 0..s.rows {
            let base = r * s.cols + start;
            data.extend_from_slice(&t.data()[base..base + len]);
        }
        let value = Tensor::new(Shape::new(s.rows, len), data);
        self.record("slice_cols", value, Op::SliceCols { a, start })
    }

    /// Places `a` at column offset `start` inside a zero matrix `total` wide.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if start + s.cols > total {
            return Err(NnetError::ShapeMismatch {
                op: "pad_cols",
                left: s,
                right: Shape::new(s.rows, total),
            });
        }
        let t = self.value(a);
        let mut out = Tensor::zeros(Shape::new(s.rows, total));
        for r in 0..s.rows {
            out.data_mut()[r * total + start..r * total + start + s.cols]
                .copy_from_slice(&t.data()[r * s.cols..(r + 1) * s.cols]);
        }
        self.record("pad_cols", out, Op::PadCols { a, start })
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if s.len() != shape.len() {
            return Err(NnetError::ShapeMismatch {
                op: "reshape",
                left: s,
                right: shape,
            });
        }
        let value = self.value(a).clone().reshaped(shape);
        self.record("reshape", value, Op::Reshape(a))
    }

    /// Applies a `k × k` matrix to every consecutive block of `k` rows:
    /// `out[b·k + i] = Σ_j adj[i][j] · a[b·k + j]`.
    pub fn graph_aggregate(&mut self, a: Var, adj: &Arc<Tensor>) -> Result<Var, NnetError> {
        let s = self.shape(a);
        let k = adj.rows();
        if adj.cols() != k || k == 0 || !s.rows.is_multiple_of(k) {
            return Err(NnetError::ShapeMismatch {
                op: "graph_aggregate",
                left: s,
                right: adj.shape(),
            });
        }
        let t = self.value(a);
        let m = s.cols;
        let mut out = Tensor::zeros(s);
        {
            let src = t.data();
            let dst = out.data_mut();
            for block in 0..s.rows / k {
                let base = block * k;
                for i in 0..k {
                    let orow = &mut dst[(base + i) * m..(base + i + 1) * m];
                    for j in 0..k {
                        let w = adj.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        let irow = &src[(base + j) * m..(base + j + 1) * m];
                        for (o, x) in orow.iter_mut().zip(irow) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        self.record(
            "graph_aggregate",
            out,
            Op::GraphAggregate {
                a,
                adj: Arc::clone(adj),
            },
        )
    }

    /// Sums every block of `k` consecutive rows into one row.
    pub fn group_sum(&mut self, a: Var, k: usize) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if k == 0 || !s.rows.is_multiple_of(k) {
            return Err(NnetError::ShapeMismatch {
                op: "group_sum",
                left: s,
                right: Shape::new(k, s.cols),
            });
        }
        let t = self.value(a);
        let groups = s.rows / k;
        let m = s.cols;
        let mut out = Tensor::zeros(Shape::new(groups, m));
        for g in 0..groups {
            for i in 0..k {
                let src = &t.data()[(g * k + i) * m..(g * k + i + 1) * m];
                for (o, x) in out.data_mut()[g * m..(g + 1) * m].iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        self.record("group_sum", out, Op::GroupSum { a, k })
    }

    /// Repeats each row `k` times consecutively.
    pub fn group_expand(&mut self, a: Var, k: usize) -> Result<Var, NnetError> {
        let s = self.shape(a);
        let t = self.value(a);
        let m = s.cols;
        let mut data = Vec::with_capacity(s.rows * k * m);
        for r in 0..s.rows {
            for _ in 0..k {
                data.extend_from_slice(&t.data()[r * m..(r + 1) * m]);
            }
        }
        let value = Tensor::new(Shape::new(s.rows * k, m), data);
        self.record("group_expand", value, Op::GroupExpand { a, k })
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NnetError> {
        let total = self.value(a).data().iter().sum();
        self.record("sum_all", Tensor::scalar(total), Op::SumAll(a))
    }

    /// Broadcasts a `1 × 1` tensor to `shape`.
    pub fn fill(&mut self, a: Var, shape: Shape) -> Result<Var, NnetError> {
        let s = self.shape(a);
        if s != Shape::new(1, 1) {
            return Err(NnetError::ShapeMismatch {
                op: "fill",
                left: s,
                right: Shape::new(1, 1),
            });
        }
        let v = self.value(a).item();
        self.record("fill", Tensor::filled(shape, v), Op::Fill(a))
    }

    /// `x · w + b` with `b` a `1 × out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnetError> {
        let xw = self.matmul(x, w)?;
        let rows = self.shape(xw).rows;
        let bb = self.repeat_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NnetError> {
        self.same_shape("mse", pred, target)?;
        let n = self.shape(pred).len();
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        let total = self.sum_all(sq)?;
        self.scale(total, 1.0 / n.max(1) as f64)
    }

    /// Gradients of `out` with respect to each of `wrt`.
    ///
    /// Propagation stops at `wrt` nodes: their own inputs receive nothing.
    /// With `create_graph` the returned gradients are differentiable nodes;
    /// otherwise they are constants.
    pub fn backward(
        &mut self,
        out: Var,
        wrt: &[Var],
        create_graph: bool,
    ) -> Result<Vec<Var>, NnetError> {
        let saved = self.recording;
        self.recording = create_graph;
        let result = self.backward_inner(out, wrt);
        self.recording = saved;
        result
    }

    fn backward_inner(&mut self, out: Var, wrt: &[Var]) -> Result<Vec<Var>, NnetError> {
        let n = out.0 + 1;
        let mut is_wrt = vec![false; n];
        for w in wrt {
            if w.0 < n {
                is_wrt[w.0] = true;
            }
        }
        let mut dep = vec![false; n];
        for i in 0..n {
            dep[i] = is_wrt[i]
                || (self.nodes[i].requires_grad
                    && self.nodes[i]
                        .op
                        .parents()
                        .iter()
                        .flatten()
                        .any(|p| dep[p.0]));
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if dep[out.0] {
            let ones = Tensor::filled(self.shape(out), 1.0);
            grads[out.0] = Some(self.constant(ones)?);
        }

        for i in (0..n).rev() {
            if !dep[i] || is_wrt[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op.clone();
            let need = |v: Var| dep[v.0];
            let mut contrib: [Option<(Var, Var)>; 2] = [None, None];
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    if need(a) {
                        let ga = if ta {
                            self.matmul_t(b, tb, g, true)?
                        } else {
                            self.matmul_t(g, false, b, !tb)?
                        };
                        contrib[0] = Some((a, ga));
                    }
                    if need(b) {
                        let gb = if tb {
                            self.matmul_t(g, true, a, ta)?
                        } else {
                            self.matmul_t(a, !ta, g, false)?
                        };
                        contrib[1] = Some((b, gb));
                    }
                }
                Op::Add(a, b) => {
                    contrib = [Some((a, g)), Some((b, g))];
                }
                Op::Sub(a, b) => {
                    contrib[0] = Some((a, g));
                    if need(b) {
                        contrib[1] = Some((b, self.scale(g, -1.0)?));
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        contrib[0] = Some((a, self.mul(g, b)?));
                    }
                    if need(b) {
                        contrib[1] = Some((b, self.mul(g, a)?));
                    }
                }
                Op::Scale(a, c) => contrib[0] = Some((a, self.scale(g, c)?)),
                Op::Relu(a) => {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask)?;
                    contrib[0] = Some((a, self.mul(g, mask)?));
                }
                Op::RepeatRows(a) => contrib[0] = Some((a, self.sum_rows(g)?)),
                Op::SumRows(a) => {
                    let rows = self.shape(a).rows;
                    contrib[0] = Some((a, self.repeat_rows(g, rows)?));
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.shape(a).cols, self.shape(b).cols);
                    if need(a) {
                        contrib[0] = Some((a, self.slice_cols(g, 0, ca)?));
                    }
                    if need(b) {
                        contrib[1] = Some((b, self.slice_cols(g, ca, cb)?));
                    }
                }
                Op::SliceCols { a, start } => {
                    let total = self.shape(a).cols;
                    contrib[0] = Some((a, self.pad_cols(g, start, total)?));
                }
                Op::PadCols { a, start } => {
                    let len = self.shape(a).cols;
                    contrib[0] = Some((a, self.slice_cols(g, start, len)?));
                }
                Op::Reshape(a) => {
                    let s = self.shape(a);
                    contrib[0] = Some((a, self.reshape(g, s)?));
                }
                Op::GraphAggregate { a, adj } => {
                    let adj_t = Arc::new(adj.transpose());
                    contrib[0] = Some((a, self.graph_aggregate(g, &adj_t)?));
                }
                Op::GroupSum { a, k } => contrib[0] = Some((a, self.group_expand(g, k)?)),
                Op::GroupExpand { a, k } => contrib[0] = Some((a, self.group_sum(g, k)?)),
                Op::SumAll(a) => {
                    let s = self.shape(a);
                    contrib[0] = Some((a, self.fill(g, s)?));
                }
                Op::Fill(a) => contrib[0] = Some((a, self.sum_all(g)?)),
            }
            for (p, gp) in contrib.into_iter().flatten() {
                if !dep[p.0] {
                    continue;
                }
                grads[p.0] = Some(match grads[p.0] {
                    None => gp,
                    Some(prev) => self.add(prev, gp)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let s = self.shape(w);
                    self.constant(Tensor::zeros(s))
                }
            })
            .collect()
    }

    /// Numeric gradients of `out` with respect to `wrt`, leaving the tape
    /// as it was.
    pub fn gradients(&mut self, out: Var, wrt: &[Var]) -> Result<Vec<Tensor>, NnetError> {
        let mark = self.len();
        let gs = self.backward(out, wrt, false)?;
        let arcs: Vec<Arc<Tensor>> = gs.iter().map(|&g| self.value_arc(g)).collect();
        self.truncate(mark.max(wrt.iter().map(|w| w.0 + 1).max().unwrap_or(0)));
        Ok(arcs
            .into_iter()
            .map(|a| Arc::try_unwrap(a).unwrap_or_else(|a| (*a).clone()))
            .collect())
    }
}
