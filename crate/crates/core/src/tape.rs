//! Minimal reverse-mode automatic differentiation over 2-D double arrays.
//!
//! Values are computed eagerly when an op node is created; `backward` walks
//! the node list in reverse and accumulates gradients into every node that
//! (transitively) depends on a parameter. Frozen inputs enter as constants
//! and are skipped during the backward pass.
//!
//! Shape rules are asserted, not returned as errors: a shape mismatch inside
//! the kernel is a bug in the calling model, never a data condition.

use ndarray::{Array2, Axis};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// (n, m) + (1, m), the second operand broadcast over rows.
    AddRowBroadcast(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    RowSlice(NodeId, usize),
    MeanRows(NodeId),
    /// Softmax cross-entropy of a (1, k) logit row against one target index.
    CrossEntropyLogits(NodeId, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Array2<f64> {
        &self.nodes[n].value
    }

    /// Value of a (1, 1) node.
    pub fn scalar(&self, n: NodeId) -> f64 {
        let v = &self.nodes[n].value;
        assert_eq!(v.shape(), &[1, 1], "scalar() on non-scalar node");
        v[[0, 0]]
    }

    /// Sign pattern of every rectifier input, in graph order.
    ///
    /// Two graphs built by the same code over the same shapes yield
    /// comparable patterns; a mismatch means some rectifier switched regime
    /// between the two evaluations.
    pub fn relu_input_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                signs.extend(self.nodes[a].value.iter().map(|&x| x > 0.0));
            }
        }
        signs
    }

    /// Gradient accumulated by the last `backward` call.
    pub fn grad(&self, n: NodeId) -> &Array2<f64> {
        self.grads[n]
            .as_ref()
            .expect("grad requested for a node backward never reached")
    }

    /// Gradient if backward reached this node (it may not when the node
    /// never influenced the loss).
    pub fn try_grad(&self, n: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(n).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn requires(&self, n: NodeId) -> bool {
        self.nodes[n].requires_grad
    }

    /// Frozen input; backward never flows into it.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; gradients accumulate here.
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dims");
        let value = va.dot(vb);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim(), "add shapes");
        let value = &self.nodes[a].value + &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(vb.nrows(), 1, "broadcast operand must be a row");
        assert_eq!(va.ncols(), vb.ncols(), "broadcast widths");
        let value = va + vb;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::AddRowBroadcast(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim(), "sub shapes");
        let value = &self.nodes[a].value - &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim(), "mul shapes");
        let value = &self.nodes[a].value * &self.nodes[b].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MulElem(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = &self.nodes[a].value * s;
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = &self.nodes[a].value + s;
        let rg = self.requires(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(f64::tanh);
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| v.max(0.0));
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(&self.nodes[a].value);
        let rg = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.t().to_owned();
        let rg = self.requires(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[*p].value.ncols()).sum();
        let mut value = Array2::zeros((rows, total));
        let mut col = 0;
        for p in parts {
            let v = &self.nodes[*p].value;
            assert_eq!(v.nrows(), rows, "concat_cols row counts");
            value
                .slice_mut(ndarray::s![.., col..col + v.ncols()])
                .assign(v);
            col += v.ncols();
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[*p].value.nrows()).sum();
        let mut value = Array2::zeros((total, cols));
        let mut row = 0;
        for p in parts {
            let v = &self.nodes[*p].value;
            assert_eq!(v.ncols(), cols, "concat_rows col counts");
            value
                .slice_mut(ndarray::s![row..row + v.nrows(), ..])
                .assign(v);
            row += v.nrows();
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[a]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let rg = self.requires(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn row_slice(&mut self, a: NodeId, row: usize) -> NodeId {
        let value = self.nodes[a]
            .value
            .slice(ndarray::s![row..row + 1, ..])
            .to_owned();
        let rg = self.requires(a);
        self.push(value, Op::RowSlice(a, row), rg)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let value = (v.sum_axis(Axis(0)) / v.nrows() as f64).insert_axis(Axis(0));
        let rg = self.requires(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Stable softmax cross-entropy of a (1, k) logit row with one positive.
    pub fn cross_entropy_logits(&mut self, a: NodeId, target: usize) -> NodeId {
        let v = &self.nodes[a].value;
        assert_eq!(v.nrows(), 1, "logits must be a row");
        assert!(target < v.ncols(), "target index in range");
        let max = v.fold(f64::NEG_INFINITY, |m, x| m.max(*x));
        let lse = max + v.mapv(|x| (x - max).exp()).sum().ln();
        let loss = lse - v[[0, target]];
        let rg = self.requires(a);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropyLogits(a, target),
            rg,
        )
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], n: NodeId, delta: Array2<f64>) {
        match &mut grads[n] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    /// Backpropagate from a (1, 1) loss node; gradients are then readable
    /// through `grad` for every parameter that influenced the loss.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss].value.shape(), &[1, 1], "loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Array2::ones((1, 1)));
        for i in (0..=loss).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Leaves keep their accumulated gradient for readout.
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let d = g.dot(&self.nodes[b].value.t());
                        Self::accumulate(&mut grads, a, d);
                    }
                    if self.requires(b) {
                        let d = self.nodes[a].value.t().dot(&g);
                        Self::accumulate(&mut grads, b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if self.requires(b) {
                        Self::accumulate(&mut grads, b, g.clone());
                    }
                }
                Op::AddRowBroadcast(a, b) => {
                    if self.requires(a) {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if self.requires(b) {
                        let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::accumulate(&mut grads, b, d);
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(a) {
                        Self::accumulate(&mut grads, a, g.clone());
                    }
                    if self.requires(b) {
                        Self::accumulate(&mut grads, b, -&g);
                    }
                }
                Op::MulElem(a, b) => {
                    if self.requires(a) {
                        let d = &g * &self.nodes[b].value;
                        Self::accumulate(&mut grads, a, d);
                    }
                    if self.requires(b) {
                        let d = &g * &self.nodes[a].value;
                        Self::accumulate(&mut grads, b, d);
                    }
                }
                Op::Scale(a, s) => {
                    Self::accumulate(&mut grads, a, &g * s);
                }
                Op::AddScalar(a) => {
                    Self::accumulate(&mut grads, a, g);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let d = &g * &y.mapv(|v| 1.0 - v * v);
                    Self::accumulate(&mut grads, a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let d = &g * &y.mapv(|v| v * (1.0 - v));
                    Self::accumulate(&mut grads, a, d);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a].value;
                    let d = &g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Self::accumulate(&mut grads, a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let mut d = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..y.ncols() {
                            d[[r, c]] = yr[c] * (gr[c] - dot);
                        }
                    }
                    Self::accumulate(&mut grads, a, d);
                }
                Op::Transpose(a) => {
                    Self::accumulate(&mut grads, a, g.t().to_owned());
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.nodes[p].value.ncols();
                        if self.requires(p) {
                            let d = g.slice(ndarray::s![.., col..col + w]).to_owned();
                            Self::accumulate(&mut grads, p, d);
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let h = self.nodes[p].value.nrows();
                        if self.requires(p) {
                            let d = g.slice(ndarray::s![row..row + h, ..]).to_owned();
                            Self::accumulate(&mut grads, p, d);
                        }
                        row += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.nodes[a].value.dim());
                    d.slice_mut(ndarray::s![.., start..start + g.ncols()])
                        .assign(&g);
                    Self::accumulate(&mut grads, a, d);
                }
                Op::RowSlice(a, row) => {
                    let mut d = Array2::zeros(self.nodes[a].value.dim());
                    d.slice_mut(ndarray::s![row..row + 1, ..]).assign(&g);
                    Self::accumulate(&mut grads, a, d);
                }
                Op::MeanRows(a) => {
                    let n = self.nodes[a].value.nrows() as f64;
                    let d = g.broadcast(self.nodes[a].value.dim()).unwrap().to_owned() / n;
                    Self::accumulate(&mut grads, a, d);
                }
                Op::CrossEntropyLogits(a, target) => {
                    let mut d = softmax_rows(&self.nodes[a].value);
                    d[[0, target]] -= 1.0;
                    Self::accumulate(&mut grads, a, d * g[[0, 0]]);
                }
            }
        }
        self.grads = grads;
    }
}
