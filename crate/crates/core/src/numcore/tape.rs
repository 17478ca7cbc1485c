//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! Every call on [`Tape`] evaluates eagerly and records the operation.
//! [`Tape::backward`] walks the record in exact reverse order and adds the
//! resulting leaf gradients into per-leaf accumulators, so two backward
//! passes from the same loss leave exactly twice the gradient.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::numcore::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor2};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Spmm { s: Arc<SparseMatrix>, x: usize },
    MatMul { a: usize, b: usize },
    AddRowBias { x: usize, b: usize },
    AddScalar { x: usize, s: usize, sign: f64 },
    Add { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Relu { x: usize },
    Sigmoid { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    SoftmaxRows { x: usize },
    MaskedSoftmaxRows { x: usize },
    ConcatCols { parts: Vec<usize> },
    SliceCols { x: usize, start: usize },
    GatherRows { x: usize, index: Vec<Option<usize>> },
    RowDot { a: usize, b: usize },
    ScaleRows { x: usize, w: usize },
    Sum { x: usize },
    SumSquares { x: usize },
    WeightedBce { p: usize, targets: Vec<f64>, w_pos: f64, w_neg: f64, total_weight: f64 },
    NtXent(Box<NtXentCache>),
}

#[derive(Debug)]
struct NtXentCache {
    a: usize,
    p: usize,
    tau: f64,
    a_hat: Tensor2,
    p_hat: Tensor2,
    a_norm: Vec<f64>,
    p_norm: Vec<f64>,
    /// Softmax mass on anchor-positive logits; zero where excluded.
    prob_ap: Tensor2,
    /// Softmax mass on anchor-anchor logits; zero on the diagonal and excluded cells.
    prob_aa: Tensor2,
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Norm floor added before dividing by a row norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated gradients of differentiable leaves, indexed like `nodes`.
    leaf_grads: Vec<Option<Tensor2>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::State(format!("variable {} was not recorded on this tape", v.0)));
        }
        Ok(())
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn variable(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a differentiable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor2> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = s.mul_dense(self.value(x))?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Spmm { s: Arc::clone(s), x: x.0 }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }, rg))
    }

    /// Adds a `1 x cols` row vector to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!("bias {:?} for input {:?}", bv.shape(), xv.shape())));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &bb) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(x.0) || self.rg(b.0);
        Ok(self.push(value, Op::AddRowBias { x: x.0, b: b.0 }, rg))
    }

    /// `x W + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    /// `x + sign * s` with `s` a 1x1 value broadcast over every entry.
    pub fn add_scalar(&mut self, x: Var, s: Var, sign: f64) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Shape("broadcast scalar must be 1x1".into()));
        }
        let sv = sign * self.value(s).item();
        let value = self.value(x).map(|v| v + sv);
        let rg = self.rg(x.0) || self.rg(s.0);
        Ok(self.push(value, Op::AddScalar { x: x.0, s: s.0, sign }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!("add {:?} and {:?}", self.value(a).shape(), self.value(b).shape())));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Scale { x: x.0, c }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Relu { x: x.0 }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Sigmoid { x: x.0 }, rg))
    }

    /// Entrywise clamp; the gradient is zero wherever the input lies outside `(lo, hi)`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Clamp { x: x.0, lo, hi }, rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = softmax_rows(self.value(x), None)?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::SoftmaxRows { x: x.0 }, rg))
    }

    /// Row-wise softmax restricted to entries where `available` (row-major,
    /// same length as `x`) is true; the rest get exactly zero mass. Every row
    /// needs at least one available entry.
    pub fn masked_softmax_rows(&mut self, x: Var, available: &[bool]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if available.len() != xv.data().len() {
            return Err(Error::Shape(format!("mask of {} for {:?}", available.len(), xv.shape())));
        }
        let value = softmax_rows(xv, Some(available))?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::MaskedSoftmaxRows { x: x.0 }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat inputs differ in row count".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(value, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape(format!("columns {start}..{} of {}", start + len, xv.cols())));
        }
        let mut value = Tensor2::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::SliceCols { x: x.0, start }, rg))
    }

    /// Output row `i` is row `index[i]` of `x`, or zeros when `index[i]` is `None`.
    pub fn gather_rows(&mut self, x: Var, index: &[Option<usize>]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= xv.rows()) {
            return Err(Error::Shape(format!("gather row {bad} from {} rows", xv.rows())));
        }
        let mut value = Tensor2::zeros(index.len(), xv.cols());
        for (r, src) in index.iter().enumerate() {
            if let Some(s) = src {
                value.row_mut(r).copy_from_slice(xv.row(*s));
            }
        }
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::GatherRows { x: x.0, index: index.to_vec() }, rg))
    }

    /// Per-row inner products, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!("row_dot {:?} and {:?}", av.shape(), bv.shape())));
        }
        let data = (0..av.rows()).map(|r| dot(av.row(r), bv.row(r))).collect::<Vec<_>>();
        let value = Tensor2::column(&data);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::RowDot { a: a.0, b: b.0 }, rg))
    }

    /// Multiplies row `i` of `x` by `w[i]`, with `w` an `n x 1` column.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(Error::Shape(format!("row weights {:?} for {:?}", wv.shape(), xv.shape())));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = wv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(x.0) || self.rg(w.0);
        Ok(self.push(value, Op::ScaleRows { x: x.0, w: w.0 }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor2::scalar(self.value(x).sum());
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Sum { x: x.0 }, rg))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor2::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::SumSquares { x: x.0 }, rg))
    }

    /// Class-weighted binary cross-entropy over an `n x 1` probability column,
    /// normalized by the total applied weight.
    pub fn weighted_bce(&mut self, p: Var, targets: &[f64], w_pos: f64, w_neg: f64) -> Result<Var> {
        self.check(p)?;
        let pv = self.value(p);
        if pv.cols() != 1 || pv.rows() != targets.len() {
            return Err(Error::Shape(format!("{} targets for predictions {:?}", targets.len(), pv.shape())));
        }
        if targets.is_empty() {
            return Err(Error::Shape("weighted BCE over an empty batch".into()));
        }
        let mut num = 0.0;
        let mut total_weight = 0.0;
        for (&pi, &t) in pv.data().iter().zip(targets) {
            num -= w_pos * t * pi.ln() + w_neg * (1.0 - t) * (1.0 - pi).ln();
            total_weight += w_pos * t + w_neg * (1.0 - t);
        }
        let value = Tensor2::scalar(num / total_weight);
        let rg = self.rg(p.0);
        let op = Op::WeightedBce { p: p.0, targets: targets.to_vec(), w_pos, w_neg, total_weight };
        Ok(self.push(value, op, rg))
    }

    /// NT-Xent over stacked anchor/positive rows with in-batch negatives.
    ///
    /// Row `i` of `positives` is the positive for anchor `i`; every other
    /// positive row and every other anchor row is a negative. When `groups`
    /// is given, rows sharing anchor `i`'s group are dropped from its
    /// negatives (the positive itself always stays).
    pub fn ntxent(&mut self, anchors: Var, positives: Var, tau: f64, groups: Option<&[usize]>) -> Result<Var> {
        self.check(anchors)?;
        self.check(positives)?;
        let (av, pv) = (self.value(anchors), self.value(positives));
        if av.shape() != pv.shape() {
            return Err(Error::Shape(format!("anchors {:?} vs positives {:?}", av.shape(), pv.shape())));
        }
        let n = av.rows();
        if n < 2 {
            return Err(Error::Argument("contrastive batch needs at least two pairs".into()));
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
        }
        if let Some(g) = groups {
            if g.len() != n {
                return Err(Error::Shape(format!("{} group ids for {n} pairs", g.len())));
            }
        }
        let (a_hat, a_norm) = normalize_rows(av);
        let (p_hat, p_norm) = normalize_rows(pv);
        let mut sim_ap = Tensor2::zeros(n, n);
        gemm_nt(&a_hat, &p_hat, &mut sim_ap);
        let mut sim_aa = Tensor2::zeros(n, n);
        gemm_nt(&a_hat, &a_hat, &mut sim_aa);

        let excluded = |i: usize, j: usize| i != j && groups.is_some_and(|g| g[i] == g[j]);
        let mut prob_ap = Tensor2::zeros(n, n);
        let mut prob_aa = Tensor2::zeros(n, n);
        let mut loss = 0.0;
        for i in 0..n {
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                if !excluded(i, j) {
                    m = m.max(sim_ap.get(i, j) / tau);
                }
                if j != i && !excluded(i, j) {
                    m = m.max(sim_aa.get(i, j) / tau);
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if !excluded(i, j) {
                    let e = (sim_ap.get(i, j) / tau - m).exp();
                    prob_ap.set(i, j, e);
                    z += e;
                }
                if j != i && !excluded(i, j) {
                    let e = (sim_aa.get(i, j) / tau - m).exp();
                    prob_aa.set(i, j, e);
                    z += e;
                }
            }
            prob_ap.row_mut(i).iter_mut().for_each(|v| *v /= z);
            prob_aa.row_mut(i).iter_mut().for_each(|v| *v /= z);
            loss += -(sim_ap.get(i, i) / tau) + m + z.ln();
        }
        let value = Tensor2::scalar(loss / n as f64);
        let rg = self.rg(anchors.0) || self.rg(positives.0);
        let cache = NtXentCache { a: anchors.0, p: positives.0, tau, a_hat, p_hat, a_norm, p_norm, prob_ap, prob_aa };
        Ok(self.push(value, Op::NtXent(Box::new(cache)), rg))
    }

    /// Propagates `d loss / d node` from a 1x1 `loss` back to every
    /// differentiable leaf and adds the result into the leaf accumulators.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.iter().all(|n| matches!(n.op, Op::Leaf)) {
            return Err(Error::State("backward called before any forward operation was recorded".into()));
        }
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        let mut adj: Vec<Option<Tensor2>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.backward_node(idx, &g, &mut adj);
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &Tensor2, adj: &mut [Option<Tensor2>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let val = |i: usize| &nodes[i].value;
        // Runs `$body` against the adjoint of input `$i`, creating it on first use.
        // Inputs that need no gradient are skipped.
        macro_rules! with_slot {
            ($i:expr, |$t:ident| $body:expr) => {{
                let i = $i;
                if nodes[i].requires_grad {
                    let (r, c) = nodes[i].value.shape();
                    let mut slot = adj[i].take().unwrap_or_else(|| Tensor2::zeros(r, c));
                    {
                        let $t = &mut slot;
                        $body;
                    }
                    adj[i] = Some(slot);
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::Spmm { s, x } => with_slot!(*x, |dx| s.mul_dense_transposed_into(g, dx)),
            Op::MatMul { a, b } => {
                with_slot!(*a, |da| gemm_nt(g, val(*b), da));
                with_slot!(*b, |db| gemm_tn(val(*a), g, db));
            }
            Op::AddRowBias { x, b } => {
                with_slot!(*x, |dx| dx.add_assign(g));
                with_slot!(*b, |db| {
                    for r in 0..g.rows() {
                        for (o, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::AddScalar { x, s, sign } => {
                with_slot!(*x, |dx| dx.add_assign(g));
                with_slot!(*s, |ds| ds.data_mut()[0] += sign * g.sum());
            }
            Op::Add { a, b } => {
                with_slot!(*a, |da| da.add_assign(g));
                with_slot!(*b, |db| db.add_assign(g));
            }
            Op::Scale { x, c } => with_slot!(*x, |dx| {
                for (o, &v) in dx.data_mut().iter_mut().zip(g.data()) {
                    *o += c * v;
                }
            }),
            Op::Relu { x } => with_slot!(*x, |dx| {
                for ((o, &v), &xi) in dx.data_mut().iter_mut().zip(g.data()).zip(val(*x).data()) {
                    if xi > 0.0 {
                        *o += v;
                    }
                }
            }),
            Op::Sigmoid { x } => with_slot!(*x, |dx| {
                for ((o, &v), &y) in dx.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                    *o += v * y * (1.0 - y);
                }
            }),
            Op::Clamp { x, lo, hi } => with_slot!(*x, |dx| {
                for ((o, &v), &xi) in dx.data_mut().iter_mut().zip(g.data()).zip(val(*x).data()) {
                    if xi > *lo && xi < *hi {
                        *o += v;
                    }
                }
            }),
            Op::SoftmaxRows { x } | Op::MaskedSoftmaxRows { x } => with_slot!(*x, |dx| {
                let y = &node.value;
                for r in 0..y.rows() {
                    let s = dot(y.row(r), g.row(r));
                    for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *o += yv * (gv - s);
                    }
                }
            }),
            Op::ConcatCols { parts } => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    with_slot!(p, |dp| {
                        for r in 0..g.rows() {
                            for (o, &v) in dp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => with_slot!(*x, |dx| {
                let w = g.cols();
                for r in 0..g.rows() {
                    for (o, &v) in dx.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }),
            Op::GatherRows { x, index } => with_slot!(*x, |dx| {
                for (r, src) in index.iter().enumerate() {
                    if let Some(s) = src {
                        for (o, &v) in dx.row_mut(*s).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }),
            Op::RowDot { a, b } => {
                with_slot!(*a, |da| {
                    for r in 0..g.rows() {
                        let gr = g.get(r, 0);
                        for (o, &bv) in da.row_mut(r).iter_mut().zip(val(*b).row(r)) {
                            *o += gr * bv;
                        }
                    }
                });
                with_slot!(*b, |db| {
                    for r in 0..g.rows() {
                        let gr = g.get(r, 0);
                        for (o, &av) in db.row_mut(r).iter_mut().zip(val(*a).row(r)) {
                            *o += gr * av;
                        }
                    }
                });
            }
            Op::ScaleRows { x, w } => {
                with_slot!(*x, |dx| {
                    for r in 0..g.rows() {
                        let s = val(*w).get(r, 0);
                        for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += s * gv;
                        }
                    }
                });
                with_slot!(*w, |dw| {
                    for r in 0..g.rows() {
                        dw.data_mut()[r] += dot(g.row(r), val(*x).row(r));
                    }
                });
            }
            Op::Sum { x } => with_slot!(*x, |dx| {
                let s = g.item();
                dx.data_mut().iter_mut().for_each(|o| *o += s);
            }),
            Op::SumSquares { x } => with_slot!(*x, |dx| {
                let s = g.item();
                for (o, &xi) in dx.data_mut().iter_mut().zip(val(*x).data()) {
                    *o += 2.0 * xi * s;
                }
            }),
            Op::WeightedBce { p, targets, w_pos, w_neg, total_weight } => with_slot!(*p, |dp| {
                let s = g.item() / total_weight;
                for ((o, &pi), &t) in dp.data_mut().iter_mut().zip(val(*p).data()).zip(targets) {
                    *o -= s * (w_pos * t / pi - w_neg * (1.0 - t) / (1.0 - pi));
                }
            }),
            Op::NtXent(c) => self.ntxent_backward(c, g.item(), adj),
        }
    }

    fn ntxent_backward(&self, c: &NtXentCache, g: f64, adj: &mut [Option<Tensor2>]) {
        let n = c.a_hat.rows();
        let scale = g / (n as f64 * c.tau);
        // Logit adjoints: softmax minus the one-hot positive.
        let mut g_ap = c.prob_ap.clone();
        for i in 0..n {
            let v = g_ap.get(i, i) - 1.0;
            g_ap.set(i, i, v);
        }
        g_ap.data_mut().iter_mut().for_each(|v| *v *= scale);
        let mut g_aa = c.prob_aa.clone();
        g_aa.data_mut().iter_mut().for_each(|v| *v *= scale);

        let d = c.a_hat.cols();
        let mut da_hat = Tensor2::zeros(n, d);
        gemm_nn(&g_ap, &c.p_hat, &mut da_hat);
        gemm_nn(&g_aa, &c.a_hat, &mut da_hat);
        gemm_tn(&g_aa, &c.a_hat, &mut da_hat);
        let mut dp_hat = Tensor2::zeros(n, d);
        gemm_tn(&g_ap, &c.a_hat, &mut dp_hat);

        for (input, norms, d_hat) in [(c.a, &c.a_norm, &da_hat), (c.p, &c.p_norm, &dp_hat)] {
            if !self.nodes[input].requires_grad {
                continue;
            }
            let x = &self.nodes[input].value;
            let dx = adj[input].get_or_insert_with(|| Tensor2::zeros(n, d));
            for (r, &norm) in norms.iter().enumerate() {
                let denom = norm + NORM_EPS;
                let xg = dot(x.row(r), d_hat.row(r));
                let coef = if norm > 0.0 { xg / (norm * denom * denom) } else { 0.0 };
                for ((o, &gv), &xv) in dx.row_mut(r).iter_mut().zip(d_hat.row(r)).zip(x.row(r)) {
                    *o += gv / denom - xv * coef;
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted row softmax. With a mask, unavailable entries get zero mass.
pub fn softmax_rows(x: &Tensor2, available: Option<&[bool]>) -> Result<Tensor2> {
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = x.row(r);
        let ok = |c: usize| available.is_none_or(|m| m[r * cols + c]);
        let m = (0..cols).filter(|&c| ok(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NonFinite(format!("softmax row {r} has no finite available logit")));
        }
        let orow = out.row_mut(r);
        let mut z = 0.0;
        for c in 0..cols {
            if ok(c) {
                orow[c] = (row[c] - m).exp();
                z += orow[c];
            }
        }
        orow.iter_mut().for_each(|o| *o /= z);
    }
    Ok(out)
}

/// Rows divided by `norm + NORM_EPS`, plus the raw norms.
pub fn normalize_rows(x: &Tensor2) -> (Tensor2, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let norm = dot(x.row(r), x.row(r)).sqrt();
        out.row_mut(r).iter_mut().for_each(|v| *v /= norm + NORM_EPS);
        norms.push(norm);
    }
    (out, norms)
}
