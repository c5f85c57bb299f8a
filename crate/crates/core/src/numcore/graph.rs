//! Eager reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation computes its value immediately and records itself on the
//! graph. [`Graph::grad`] walks the recorded nodes backwards and expresses each
//! vector-Jacobian product with the same primitive operations, so the gradient
//! nodes it returns are ordinary graph nodes and can be differentiated again.
//! This is what makes the gradient-penalty term trainable.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable parameter.
    Param,
    /// Differentiable input that is not a parameter (e.g. critic interpolates).
    Input,
    /// Never differentiated.
    Constant,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    Exp(NodeId),
    Log(NodeId),
    InvOrZero(NodeId),
    Sum(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    BroadcastScalar(NodeId),
    BroadcastRows(NodeId),
    BroadcastCols(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize),
    PadCols(NodeId, usize),
    Gather(NodeId, Rc<[usize]>),
    ScatterAdd(NodeId, Rc<[usize]>),
    Pick(NodeId, Rc<[usize]>),
    Place(NodeId, Rc<[usize]>),
    LogSoftmax(NodeId),
    Norm(NodeId),
    RowNorm(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Tanh(_) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::InvOrZero(_) => "inv_or_zero",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::PadCols(..) => "pad_cols",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Pick(..) => "pick",
            Op::Place(..) => "place",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Norm(_) => "norm",
            Op::RowNorm(_) => "row_norm",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
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

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).item()
    }

    /// Fails if any recorded operation produced NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            None => Ok(()),
            Some((i, op)) => Err(Error::NonFinite(format!("node {i} ({op})"))),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf(kind) => *kind != LeafKind::Constant,
            _ => self
                .inputs(&op)
                .iter()
                .any(|i| self.nodes[i.0].requires_grad),
        };
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(id)
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::InvOrZero(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastScalar(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::SliceCols(a, _)
            | Op::PadCols(a, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _)
            | Op::Pick(a, _)
            | Op::Place(a, _)
            | Op::LogSoftmax(a)
            | Op::Norm(a)
            | Op::RowNorm(a) => vec![*a],
        }
    }

    pub fn leaf(&mut self, value: Tensor, kind: LeafKind) -> NodeId {
        self.push(value, Op::Leaf(kind))
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, LeafKind::Constant)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf(_))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch between nodes {} and {}",
            a.0,
            b.0
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "div");
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// `1/x`, with `0` mapped to `0`.
    pub fn inv_or_zero(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(v, Op::InvOrZero(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `n x d -> 1 x d`
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        let v = Tensor::raw(1, t.cols(), out);
        self.push(v, Op::SumRows(a))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let n = self.shape(a)[0] as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// `n x d -> n x 1`
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let v = Tensor::raw(t.rows(), 1, out);
        self.push(v, Op::SumCols(a))
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = Tensor::filled(rows, cols, self.scalar_value(a));
        self.push(v, Op::BroadcastScalar(a))
    }

    /// `1 x d -> n x d`
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.rows(), 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(n * t.cols());
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::raw(n, t.cols(), data);
        self.push(v, Op::BroadcastRows(a))
    }

    /// `n x 1 -> n x d`
    pub fn broadcast_cols(&mut self, a: NodeId, d: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.cols(), 1, "broadcast_cols expects a column vector");
        let mut data = Vec::with_capacity(t.rows() * d);
        for &x in t.data() {
            data.extend(std::iter::repeat_n(x, d));
        }
        let v = Tensor::raw(t.rows(), d, data);
        self.push(v, Op::BroadcastCols(a))
    }

    /// Adds a `1 x d` bias to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let n = self.shape(a)[0];
        let b = self.broadcast_rows(bias, n);
        self.add(a, b)
    }

    /// `x W + b` for a batch `x`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "concat_cols row mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..ta.rows() {
            data.extend_from_slice(ta.row_slice(i));
            data.extend_from_slice(tb.row_slice(i));
        }
        let v = Tensor::raw(ta.rows(), ta.cols() + tb.cols(), data);
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(a);
        assert!(
            start + len <= t.cols() && len > 0,
            "slice_cols out of range"
        );
        let mut data = Vec::with_capacity(t.rows() * len);
        for i in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let v = Tensor::raw(t.rows(), len, data);
        self.push(v, Op::SliceCols(a, start))
    }

    /// Places `a` at column offset `start` inside a zero matrix with `total` columns.
    fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        let t = self.value(a);
        let mut data = vec![0.0; t.rows() * total];
        for i in 0..t.rows() {
            data[i * total + start..i * total + start + t.cols()].copy_from_slice(t.row_slice(i));
        }
        let v = Tensor::raw(t.rows(), total, data);
        self.push(v, Op::PadCols(a, start))
    }

    /// Row lookup, e.g. embedding tables.
    pub fn gather(&mut self, table: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(table).gather_rows(idx);
        self.push(v, Op::Gather(table, idx.into()))
    }

    fn scatter_add(&mut self, a: NodeId, idx: Rc<[usize]>, rows: usize) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(rows, t.cols());
        for (src, &dst) in idx.iter().enumerate() {
            for (o, v) in out.row_slice_mut(dst).iter_mut().zip(t.row_slice(src)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAdd(a, idx))
    }

    /// Picks `a[i, idx[i]]` for each row, giving `n x 1`.
    pub fn pick(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "pick needs one index per row");
        let out = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let v = Tensor::raw(t.rows(), 1, out);
        self.push(v, Op::Pick(a, idx.into()))
    }

    fn place(&mut self, a: NodeId, idx: Rc<[usize]>, cols: usize) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), cols);
        for (i, &j) in idx.iter().enumerate() {
            out.row_slice_mut(i)[j] = t.get(i, 0);
        }
        self.push(out, Op::Place(a, idx))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = Vec::with_capacity(t.len());
        for i in 0..t.rows() {
            let row = t.row_slice(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let v = Tensor::raw(t.rows(), t.cols(), out);
        self.push(v, Op::LogSoftmax(a))
    }

    /// Euclidean norm of the whole tensor, `1 x 1`.
    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(v, Op::Norm(a))
    }

    /// Euclidean norm of each row, `n x 1`.
    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = (0..t.rows())
            .map(|i| t.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::raw(t.rows(), 1, out);
        self.push(v, Op::RowNorm(a))
    }

    /// Row-wise cosine similarity of two equally shaped batches, `n x 1`.
    /// Zero rows give similarity 0.
    pub fn row_cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let ab = self.mul(a, b);
        let num = self.sum_cols(ab);
        let na = self.row_norm(a);
        let nb = self.row_norm(b);
        let den = self.mul(na, nb);
        let inv = self.inv_or_zero(den);
        self.mul(num, inv)
    }

    /// Gradients of a scalar `output` with respect to leaves `wrt`, returned as
    /// graph nodes that can themselves be differentiated.
    ///
    /// Leaves that do not influence `output` get a zero constant.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        if output.0 >= n {
            return Err(Error::NotALeaf(output.0));
        }
        let shape = self.shape(output);
        if shape != [1, 1] {
            return Err(Error::NotScalar(shape));
        }
        for w in wrt {
            if w.0 >= n
                || !matches!(
                    self.nodes[w.0].op,
                    Op::Leaf(LeafKind::Param) | Op::Leaf(LeafKind::Input)
                )
            {
                return Err(Error::NotALeaf(w.0));
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; output.0 + 1];
        adjoint[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        for i in (0..=output.0).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (input, contrib) in self.vjp(NodeId(i), g) {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint[w.0] {
                Some(g) => g,
                None => {
                    let [r, c] = self.shape(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    /// Numeric gradients of a scalar loss.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        self.check_finite()?;
        let grads = self.grad(loss, wrt)?;
        let out: Vec<Tensor> = grads.iter().map(|g| self.value(*g).clone()).collect();
        self.check_finite()?;
        Ok(out)
    }

    /// `||d output / d input||_2` as a differentiable scalar node.
    pub fn input_grad_norm(&mut self, output: NodeId, input: NodeId) -> Result<NodeId> {
        self.require_input_leaf(input)?;
        let g = self.grad(output, &[input])?[0];
        Ok(self.norm(g))
    }

    /// Per-row `||d output / d input_i||_2` for a batched input, `n x 1`.
    pub fn input_grad_row_norms(&mut self, output: NodeId, input: NodeId) -> Result<NodeId> {
        self.require_input_leaf(input)?;
        let g = self.grad(output, &[input])?[0];
        Ok(self.row_norm(g))
    }

    fn require_input_leaf(&self, input: NodeId) -> Result<()> {
        match self.nodes.get(input.0).map(|n| &n.op) {
            Some(Op::Leaf(LeafKind::Input)) => Ok(()),
            _ => Err(Error::NotALeaf(input.0)),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Contributions of the adjoint `g` of `node` to each differentiable input.
    fn vjp(&mut self, node: NodeId, g: NodeId) -> Vec<(NodeId, NodeId)> {
        let op = self.nodes[node.0].op.clone();
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    out.push((a, g));
                }
                if self.needs(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    out.push((a, g));
                }
                if self.needs(b) {
                    let ng = self.neg(g);
                    out.push((b, ng));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let ga = self.mul(g, b);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    let gb = self.mul(g, a);
                    out.push((b, gb));
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let ga = self.div(g, b);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    // d(a/b)/db = -(a/b)/b
                    let gy = self.mul(g, node);
                    let q = self.div(gy, b);
                    let gb = self.neg(q);
                    out.push((b, gb));
                }
            }
            Op::Neg(a) => {
                let ga = self.neg(g);
                out.push((a, ga));
            }
            Op::Scale(a, k) => {
                let ga = self.scale(g, k);
                out.push((a, ga));
            }
            Op::AddScalar(a) => out.push((a, g)),
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g);
                    out.push((b, gb));
                }
            }
            Op::Transpose(a) => {
                let ga = self.transpose(g);
                out.push((a, ga));
            }
            Op::Tanh(a) => {
                // 1 - tanh^2, built from the output so it stays differentiable
                let y2 = self.mul(node, node);
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, 1.0);
                let ga = self.mul(g, d);
                out.push((a, ga));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                let m = self.constant(mask);
                let ga = self.mul(g, m);
                out.push((a, ga));
            }
            Op::Exp(a) => {
                let ga = self.mul(g, node);
                out.push((a, ga));
            }
            Op::Log(a) => {
                let ga = self.div(g, a);
                out.push((a, ga));
            }
            Op::InvOrZero(a) => {
                // d(1/x) = -1/x^2, zero where the forward value was clamped
                let y2 = self.mul(node, node);
                let gy = self.mul(g, y2);
                let ga = self.neg(gy);
                out.push((a, ga));
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(a);
                let ga = self.broadcast_scalar(g, r, c);
                out.push((a, ga));
            }
            Op::SumRows(a) => {
                let r = self.shape(a)[0];
                let ga = self.broadcast_rows(g, r);
                out.push((a, ga));
            }
            Op::SumCols(a) => {
                let c = self.shape(a)[1];
                let ga = self.broadcast_cols(g, c);
                out.push((a, ga));
            }
            Op::BroadcastScalar(a) => {
                let ga = self.sum(g);
                out.push((a, ga));
            }
            Op::BroadcastRows(a) => {
                let ga = self.sum_rows(g);
                out.push((a, ga));
            }
            Op::BroadcastCols(a) => {
                let ga = self.sum_cols(g);
                out.push((a, ga));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(a)[1];
                let cb = self.shape(b)[1];
                if self.needs(a) {
                    let ga = self.slice_cols(g, 0, ca);
                    out.push((a, ga));
                }
                if self.needs(b) {
                    let gb = self.slice_cols(g, ca, cb);
                    out.push((b, gb));
                }
            }
            Op::SliceCols(a, start) => {
                let total = self.shape(a)[1];
                let ga = self.pad_cols(g, start, total);
                out.push((a, ga));
            }
            Op::PadCols(a, start) => {
                let len = self.shape(a)[1];
                let ga = self.slice_cols(g, start, len);
                out.push((a, ga));
            }
            Op::Gather(a, idx) => {
                let rows = self.shape(a)[0];
                let ga = self.scatter_add(g, idx, rows);
                out.push((a, ga));
            }
            Op::ScatterAdd(a, idx) => {
                let ga = self.gather(g, &idx);
                out.push((a, ga));
            }
            Op::Pick(a, idx) => {
                let cols = self.shape(a)[1];
                let ga = self.place(g, idx, cols);
                out.push((a, ga));
            }
            Op::Place(a, idx) => {
                let ga = self.pick(g, &idx);
                out.push((a, ga));
            }
            Op::LogSoftmax(a) => {
                // g - softmax * rowsum(g)
                let c = self.shape(a)[1];
                let p = self.exp(node);
                let s = self.sum_cols(g);
                let sb = self.broadcast_cols(s, c);
                let ps = self.mul(p, sb);
                let ga = self.sub(g, ps);
                out.push((a, ga));
            }
            Op::Norm(a) => {
                let [r, c] = self.shape(a);
                let inv = self.inv_or_zero(node);
                let k = self.mul(g, inv);
                let kb = self.broadcast_scalar(k, r, c);
                let ga = self.mul(kb, a);
                out.push((a, ga));
            }
            Op::RowNorm(a) => {
                let c = self.shape(a)[1];
                let inv = self.inv_or_zero(node);
                let k = self.mul(g, inv);
                let kb = self.broadcast_cols(k, c);
                let ga = self.mul(kb, a);
                out.push((a, ga));
            }
        }
        out
    }
}
