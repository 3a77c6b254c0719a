//! Reverse-mode differentiation over array-valued primitives.
//!
//! A [`Tape`] records one forward pass as a Wengert list: each operation
//! appends a node holding its value and parent indices, so tape order is
//! already topological. [`Tape::backward`] seeds the loss node with 1 and
//! sweeps the list once in reverse, accumulating adjoints into parents.
//! Inputs that never feed the loss get an exactly-zero gradient.
//!
//! One tape per training thread; a tape is never shared.

use crate::array::{self, DenseArray};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId {
    tape: u64,
    index: usize,
}

enum Op<T: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Matmul(usize, usize),
    Transpose(usize),
    Softplus(usize),
    Sin(usize),
    Cos(usize),
    /// y = (x + eps)^(-1/2), elementwise.
    Rsqrt(usize, T),
    SoftmaxRows(usize),
    SumAll(usize),
    RowSums(usize),
    MeanRows(usize),
    BroadcastCol(usize),
    BroadcastRow(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    /// x * s with s a recorded 1x1 scalar.
    MulScalarVar(usize, usize),
    /// Pairwise 2-D rotation of consecutive channel pairs by recorded
    /// cos/sin tables (n x w/2 each).
    RotatePairs {
        x: usize,
        cos: usize,
        sin: usize,
    },
    /// Mean cross-entropy of row logits against integer labels.
    CrossEntropyMean(usize, Vec<usize>),
}

struct Node<T: Scalar> {
    value: DenseArray<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by one backward sweep.
pub struct Gradients<T: Scalar> {
    tape: u64,
    grads: Vec<Option<DenseArray<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`. Inputs the loss never
    /// touched get an exactly-zero array of the input's shape.
    pub fn wrt(&self, var: VarId) -> Result<DenseArray<T>> {
        if var.tape != self.tape || var.index >= self.shapes.len() {
            return Err(Error::InvalidArgument(
                "gradient requested for a value not on this tape".into(),
            ));
        }
        Ok(match &self.grads[var.index] {
            Some(g) => g.clone(),
            None => DenseArray::zeros(&self.shapes[var.index]),
        })
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: VarId) -> &DenseArray<T> {
        self.check(var);
        &self.nodes[var.index].value
    }

    fn check(&self, var: VarId) {
        assert!(
            var.tape == self.id && var.index < self.nodes.len(),
            "VarId does not belong to this tape"
        );
    }

    fn push(&mut self, value: DenseArray<T>, op: Op<T>, requires_grad: bool) -> VarId {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        VarId {
            tape: self.id,
            index,
        }
    }

    /// Record a differentiable input (a parameter).
    pub fn param(&mut self, value: DenseArray<T>) -> VarId {
        self.push(value, Op::Leaf, true)
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, value: DenseArray<T>) -> VarId {
        self.push(value, Op::Leaf, false)
    }

    fn flows(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.check(a);
        self.check(b);
        let v = self.nodes[a.index]
            .value
            .add(&self.nodes[b.index].value)
            .expect("tape add: shape mismatch");
        let rg = self.flows(a.index) || self.flows(b.index);
        self.push(v, Op::Add(a.index, b.index), rg)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.check(a);
        self.check(b);
        let v = self.nodes[a.index]
            .value
            .sub(&self.nodes[b.index].value)
            .expect("tape sub: shape mismatch");
        let rg = self.flows(a.index) || self.flows(b.index);
        self.push(v, Op::Sub(a.index, b.index), rg)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.check(a);
        self.check(b);
        let v = self.nodes[a.index]
            .value
            .hadamard(&self.nodes[b.index].value)
            .expect("tape mul: shape mismatch");
        let rg = self.flows(a.index) || self.flows(b.index);
        self.push(v, Op::Mul(a.index, b.index), rg)
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.neg();
        let rg = self.flows(a.index);
        self.push(v, Op::Neg(a.index), rg)
    }

    pub fn scale(&mut self, a: VarId, c: T) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.scale(c);
        let rg = self.flows(a.index);
        self.push(v, Op::Scale(a.index, c), rg)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        self.check(a);
        self.check(b);
        let v = self.nodes[a.index]
            .value
            .matmul(&self.nodes[b.index].value)
            .expect("tape matmul: shape mismatch");
        let rg = self.flows(a.index) || self.flows(b.index);
        self.push(v, Op::Matmul(a.index, b.index), rg)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.transpose();
        let rg = self.flows(a.index);
        self.push(v, Op::Transpose(a.index), rg)
    }

    pub fn softplus(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = array::softplus(&self.nodes[a.index].value);
        let rg = self.flows(a.index);
        self.push(v, Op::Softplus(a.index), rg)
    }

    pub fn sin(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.map(|x| x.sin());
        let rg = self.flows(a.index);
        self.push(v, Op::Sin(a.index), rg)
    }

    pub fn cos(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.map(|x| x.cos());
        let rg = self.flows(a.index);
        self.push(v, Op::Cos(a.index), rg)
    }

    pub fn rsqrt(&mut self, a: VarId, eps: T) -> VarId {
        self.check(a);
        let v = self.nodes[a.index]
            .value
            .map(|x| T::one() / (x + eps).sqrt());
        let rg = self.flows(a.index);
        self.push(v, Op::Rsqrt(a.index, eps), rg)
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = array::softmax_rows(&self.nodes[a.index].value)
            .expect("tape softmax_rows: non-finite logits");
        let rg = self.flows(a.index);
        self.push(v, Op::SoftmaxRows(a.index), rg)
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = DenseArray::scalar(self.nodes[a.index].value.sum());
        let rg = self.flows(a.index);
        self.push(v, Op::SumAll(a.index), rg)
    }

    pub fn row_sums(&mut self, a: VarId) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.row_sums();
        let rg = self.flows(a.index);
        self.push(v, Op::RowSums(a.index), rg)
    }

    /// Column means over rows: n x k -> 1 x k.
    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        self.check(a);
        let x = &self.nodes[a.index].value;
        let n = T::of(x.rows() as f64);
        let v = x.col_sums().scale(T::one() / n);
        let rg = self.flows(a.index);
        self.push(v, Op::MeanRows(a.index), rg)
    }

    pub fn broadcast_col(&mut self, a: VarId, cols: usize) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.broadcast_col(cols);
        let rg = self.flows(a.index);
        self.push(v, Op::BroadcastCol(a.index), rg)
    }

    pub fn broadcast_row(&mut self, a: VarId, rows: usize) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.broadcast_row(rows);
        let rg = self.flows(a.index);
        self.push(v, Op::BroadcastRow(a.index), rg)
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, end: usize) -> VarId {
        self.check(a);
        let v = self.nodes[a.index].value.slice_cols(start, end);
        let rg = self.flows(a.index);
        self.push(v, Op::SliceCols(a.index, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        for p in parts {
            self.check(*p);
        }
        let arrays: Vec<&DenseArray<T>> =
            parts.iter().map(|p| &self.nodes[p.index].value).collect();
        let v = array::concat_last_axis(&arrays).expect("tape concat_cols: shape mismatch");
        let rg = parts.iter().any(|p| self.flows(p.index));
        self.push(
            v,
            Op::ConcatCols(parts.iter().map(|p| p.index).collect()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        for p in parts {
            self.check(*p);
        }
        let cols = self.nodes[parts[0].index].value.cols();
        let mut data = Vec::new();
        let mut rows = 0usize;
        for p in parts {
            let a = &self.nodes[p.index].value;
            assert_eq!(a.cols(), cols, "tape concat_rows: column mismatch");
            rows += a.rows();
            data.extend_from_slice(a.data());
        }
        let v = DenseArray::from_vec(&[rows, cols], data).unwrap();
        let rg = parts.iter().any(|p| self.flows(p.index));
        self.push(
            v,
            Op::ConcatRows(parts.iter().map(|p| p.index).collect()),
            rg,
        )
    }

    pub fn mul_scalar_var(&mut self, a: VarId, s: VarId) -> VarId {
        self.check(a);
        self.check(s);
        let sv = self.nodes[s.index].value.data()[0];
        assert_eq!(
            self.nodes[s.index].value.len(),
            1,
            "mul_scalar_var: s must be 1x1"
        );
        let v = self.nodes[a.index].value.scale(sv);
        let rg = self.flows(a.index) || self.flows(s.index);
        self.push(v, Op::MulScalarVar(a.index, s.index), rg)
    }

    /// Rotate consecutive channel pairs (2c, 2c+1) of `x` by per-entry
    /// angles given through their cos/sin tables (each n x w/2). Gradients
    /// flow to `x`, `cos`, and `sin`.
    pub fn rotate_pairs(&mut self, x: VarId, cos: VarId, sin: VarId) -> VarId {
        self.check(x);
        self.check(cos);
        self.check(sin);
        let xv = &self.nodes[x.index].value;
        let cv = &self.nodes[cos.index].value;
        let sv = &self.nodes[sin.index].value;
        let (n, w) = (xv.rows(), xv.cols());
        assert!(w % 2 == 0, "rotate_pairs: odd width");
        assert_eq!(cv.shape(), &[n, w / 2], "rotate_pairs: cos shape");
        assert_eq!(sv.shape(), &[n, w / 2], "rotate_pairs: sin shape");
        let mut out = DenseArray::zeros(&[n, w]);
        for i in 0..n {
            for c in 0..w / 2 {
                let (a, b) = (xv.at(i, 2 * c), xv.at(i, 2 * c + 1));
                let (co, si) = (cv.at(i, c), sv.at(i, c));
                out.set(i, 2 * c, a * co - b * si);
                out.set(i, 2 * c + 1, a * si + b * co);
            }
        }
        let rg = self.flows(x.index) || self.flows(cos.index) || self.flows(sin.index);
        self.push(
            out,
            Op::RotatePairs {
                x: x.index,
                cos: cos.index,
                sin: sin.index,
            },
            rg,
        )
    }

    /// Mean cross-entropy over rows of `logits` against integer labels,
    /// computed through a max-shifted log-sum-exp. Returns a 1x1 value.
    pub fn cross_entropy_mean(&mut self, logits: VarId, labels: &[usize]) -> VarId {
        self.check(logits);
        let z = &self.nodes[logits.index].value;
        let (n, k) = (z.rows(), z.cols());
        assert_eq!(labels.len(), n, "cross_entropy_mean: label count");
        let mut total = T::zero();
        for i in 0..n {
            let row = z.row(i);
            let mx = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
            let lse = mx + row.iter().fold(T::zero(), |a, &x| a + (x - mx).exp()).ln();
            assert!(labels[i] < k, "cross_entropy_mean: label out of range");
            total += lse - row[labels[i]];
        }
        let v = DenseArray::scalar(total / T::of(n as f64));
        let rg = self.flows(logits.index);
        self.push(v, Op::CrossEntropyMean(logits.index, labels.to_vec()), rg)
    }

    /// Reverse sweep from a scalar loss. Visits each recorded node exactly
    /// once in reverse topological (= recording) order.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<T>> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::InvalidArgument(
                "backward: loss value is not on this tape".into(),
            ));
        }
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.index].value.shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray<T>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(DenseArray::ones(self.nodes[loss.index].value.shape()));

        for idx in (0..=loss.index).rev() {
            let g = match grads[idx].clone() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(grads: &mut [Option<DenseArray<T>>], idx: usize, delta: DenseArray<T>) {
        match &mut grads[idx] {
            Some(g) => {
                *g = g.add(&delta).expect("gradient shape mismatch");
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &DenseArray<T>, grads: &mut [Option<DenseArray<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.clone());
                }
                if self.flows(*b) {
                    Self::accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.clone());
                }
                if self.flows(*b) {
                    Self::accumulate(grads, *b, g.neg());
                }
            }
            Op::Mul(a, b) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.hadamard(val(*b)).unwrap());
                }
                if self.flows(*b) {
                    Self::accumulate(grads, *b, g.hadamard(val(*a)).unwrap());
                }
            }
            Op::Neg(a) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.neg());
                }
            }
            Op::Scale(a, c) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.scale(*c));
                }
            }
            Op::Matmul(a, b) => {
                if self.flows(*a) {
                    let gb = g.matmul(&val(*b).transpose()).unwrap();
                    Self::accumulate(grads, *a, gb);
                }
                if self.flows(*b) {
                    let ga = val(*a).transpose().matmul(g).unwrap();
                    Self::accumulate(grads, *b, ga);
                }
            }
            Op::Transpose(a) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.transpose());
                }
            }
            Op::Softplus(a) => {
                if self.flows(*a) {
                    let dx = val(*a).map(array::sigmoid_scalar);
                    Self::accumulate(grads, *a, g.hadamard(&dx).unwrap());
                }
            }
            Op::Sin(a) => {
                if self.flows(*a) {
                    let dx = val(*a).map(|x| x.cos());
                    Self::accumulate(grads, *a, g.hadamard(&dx).unwrap());
                }
            }
            Op::Cos(a) => {
                if self.flows(*a) {
                    let dx = val(*a).map(|x| -x.sin());
                    Self::accumulate(grads, *a, g.hadamard(&dx).unwrap());
                }
            }
            Op::Rsqrt(a, eps) => {
                if self.flows(*a) {
                    let y = &self.nodes[idx].value;
                    let _ = eps;
                    let half = T::of(0.5);
                    let dx = y.map(|v| -half * v * v * v);
                    Self::accumulate(grads, *a, g.hadamard(&dx).unwrap());
                }
            }
            Op::SoftmaxRows(a) => {
                if self.flows(*a) {
                    let y = &self.nodes[idx].value;
                    let gy = g.hadamard(y).unwrap();
                    let rowdot = gy.row_sums(); // n x 1
                    let corr = rowdot.broadcast_col(y.cols()).hadamard(y).unwrap();
                    Self::accumulate(grads, *a, gy.sub(&corr).unwrap());
                }
            }
            Op::SumAll(a) => {
                if self.flows(*a) {
                    let gv = g.data()[0];
                    Self::accumulate(grads, *a, DenseArray::full(val(*a).shape(), gv));
                }
            }
            Op::RowSums(a) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.broadcast_col(val(*a).cols()));
                }
            }
            Op::MeanRows(a) => {
                if self.flows(*a) {
                    let n = val(*a).rows();
                    let scaled = g.scale(T::one() / T::of(n as f64));
                    Self::accumulate(grads, *a, scaled.broadcast_row(n));
                }
            }
            Op::BroadcastCol(a) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.row_sums());
                }
            }
            Op::BroadcastRow(a) => {
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.col_sums());
                }
            }
            Op::SliceCols(a, start) => {
                if self.flows(*a) {
                    let src = val(*a);
                    let mut full = DenseArray::zeros(src.shape());
                    let w = g.cols();
                    for i in 0..g.rows() {
                        let dst = full.row_mut(i);
                        dst[*start..*start + w].copy_from_slice(g.row(i));
                    }
                    Self::accumulate(grads, *a, full);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if self.flows(*p) {
                        Self::accumulate(grads, *p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = val(*p).rows();
                    if self.flows(*p) {
                        let cols = g.cols();
                        let mut piece = DenseArray::zeros(&[r, cols]);
                        for i in 0..r {
                            piece.row_mut(i).copy_from_slice(g.row(off + i));
                        }
                        Self::accumulate(grads, *p, piece);
                    }
                    off += r;
                }
            }
            Op::MulScalarVar(a, s) => {
                let sv = val(*s).data()[0];
                if self.flows(*a) {
                    Self::accumulate(grads, *a, g.scale(sv));
                }
                if self.flows(*s) {
                    let gs = g.hadamard(val(*a)).unwrap().sum();
                    Self::accumulate(grads, *s, DenseArray::scalar(gs));
                }
            }
            Op::RotatePairs { x, cos, sin } => {
                let xv = val(*x);
                let cv = val(*cos);
                let sv = val(*sin);
                let (n, w) = (xv.rows(), xv.cols());
                if self.flows(*x) {
                    let mut gx = DenseArray::zeros(&[n, w]);
                    for i in 0..n {
                        for c in 0..w / 2 {
                            let (go, ge) = (g.at(i, 2 * c), g.at(i, 2 * c + 1));
                            let (co, si) = (cv.at(i, c), sv.at(i, c));
                            gx.set(i, 2 * c, go * co + ge * si);
                            gx.set(i, 2 * c + 1, -go * si + ge * co);
                        }
                    }
                    Self::accumulate(grads, *x, gx);
                }
                if self.flows(*cos) {
                    let mut gc = DenseArray::zeros(&[n, w / 2]);
                    for i in 0..n {
                        for c in 0..w / 2 {
                            let (go, ge) = (g.at(i, 2 * c), g.at(i, 2 * c + 1));
                            let (a, b) = (xv.at(i, 2 * c), xv.at(i, 2 * c + 1));
                            gc.set(i, c, go * a + ge * b);
                        }
                    }
                    Self::accumulate(grads, *cos, gc);
                }
                if self.flows(*sin) {
                    let mut gs = DenseArray::zeros(&[n, w / 2]);
                    for i in 0..n {
                        for c in 0..w / 2 {
                            let (go, ge) = (g.at(i, 2 * c), g.at(i, 2 * c + 1));
                            let (a, b) = (xv.at(i, 2 * c), xv.at(i, 2 * c + 1));
                            gs.set(i, c, -go * b + ge * a);
                        }
                    }
                    Self::accumulate(grads, *sin, gs);
                }
            }
            Op::CrossEntropyMean(a, labels) => {
                if self.flows(*a) {
                    let z = val(*a);
                    let probs = array::softmax_rows(z).expect("cross-entropy backward");
                    let n = z.rows();
                    let gv = g.data()[0];
                    let scale = gv / T::of(n as f64);
                    let mut gx = probs;
                    for (i, &lab) in labels.iter().enumerate() {
                        let v = gx.at(i, lab);
                        gx.set(i, lab, v - T::one());
                    }
                    Self::accumulate(grads, *a, gx.scale(scale));
                }
            }
        }
    }
}

/// Gradient of a scalar-valued composition with respect to one input array.
///
/// Builds a fresh tape, records `f`, and runs one backward sweep.
pub fn grad<T: Scalar, F>(f: F, at: &DenseArray<T>) -> Result<DenseArray<T>>
where
    F: FnOnce(&mut Tape<T>, VarId) -> VarId,
{
    let mut tape = Tape::new();
    let x = tape.param(at.clone());
    let out = f(&mut tape, x);
    let grads = tape.backward(out)?;
    grads.wrt(x)
}
