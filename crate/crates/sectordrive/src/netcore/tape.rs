//! Reverse-mode autodiff tape over dense 2D tensors.
//!
//! Every operation appends a node; `backward` walks the tape in reverse and
//! accumulates exact gradients. The op set is deliberately small: exactly what
//! the model and losses consume.

use std::rc::Rc;

use super::tensor::Tensor;
use super::NetError;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

enum Op {
    /// Constant or parameter leaf; `param` is the vault slot for parameters.
    Leaf { param: Option<usize> },
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Div(VarId, VarId),
    /// Row-broadcast add: [m,n] + [1,n].
    AddRow(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Matmul(VarId, VarId),
    Transpose(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Softplus(VarId),
    Ln(VarId),
    Abs(VarId),
    Clamp(VarId, f64, f64),
    Sum(VarId),
    Mean(VarId),
    /// Softmax per row over the columns flagged valid; invalid columns get
    /// exactly zero weight.
    RowSoftmaxMasked(VarId, Rc<Vec<bool>>),
    /// out[r] = input[idx[r]] for Some, zero row for None.
    GatherRows(VarId, Rc<Vec<Option<usize>>>),
    ConcatRows(Vec<VarId>),
    ConcatCols(VarId, VarId),
    SliceRows(VarId, usize, usize),
    /// Zero out rows flagged false; gradients of masked rows are dropped.
    MaskRows(VarId, Rc<Vec<bool>>),
}

struct Node {
    op: Op,
    data: Tensor,
}

/// The recording tape. One forward pass per tape; rebuild per step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, data: Tensor) -> VarId {
        self.nodes.push(Node { op, data });
        VarId(self.nodes.len() - 1)
    }

    pub fn val(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: VarId) -> (usize, usize) {
        self.val(id).shape()
    }

    /// Constant input: contributes no parameter gradient.
    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(Op::Leaf { param: None }, t)
    }

    /// Parameter leaf bound to a vault slot; `backward` accumulates its grad.
    pub fn param(&mut self, slot: usize, t: Tensor) -> VarId {
        self.push(Op::Leaf { param: Some(slot) }, t)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
        );
        self.push(Op::Add(a, b), data)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect(),
        );
        self.push(Op::Sub(a, b), data)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
        );
        self.push(Op::Mul(a, b), data)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.shape(), tb.shape(), "div shape mismatch");
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(x, y)| x / y).collect(),
        );
        self.push(Op::Div(a, b), data)
    }

    pub fn add_row(&mut self, a: VarId, row: VarId) -> VarId {
        let (ta, tr) = (self.val(a), self.val(row));
        assert_eq!(tr.rows, 1, "add_row expects a 1xN row");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let mut data = ta.clone();
        for r in 0..data.rows {
            for c in 0..data.cols {
                data.data[r * data.cols + c] += tr.data[c];
            }
        }
        self.push(Op::AddRow(a, row), data)
    }

    pub fn scale(&mut self, a: VarId, k: f64) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * k).collect());
        self.push(Op::Scale(a, k), data)
    }

    pub fn add_scalar(&mut self, a: VarId, k: f64) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x + k).collect());
        self.push(Op::AddScalar(a), data)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let data = self.val(a).matmul(self.val(b));
        self.push(Op::Matmul(a, b), data)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let data = self.val(a).transpose();
        self.push(Op::Transpose(a), data)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        );
        self.push(Op::Sigmoid(a), data)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.tanh()).collect());
        self.push(Op::Tanh(a), data)
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p()).collect(),
        );
        self.push(Op::Softplus(a), data)
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.ln()).collect());
        self.push(Op::Ln(a), data)
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let data = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.abs()).collect());
        self.push(Op::Abs(a), data)
    }

    /// Clamp with pass-through gradient strictly inside the interval.
    pub fn clamp(&mut self, a: VarId, lo: f64, hi: f64) -> VarId {
        let ta = self.val(a);
        let data =
            Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.clamp(lo, hi)).collect());
        self.push(Op::Clamp(a, lo, hi), data)
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let s: f64 = self.val(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let ta = self.val(a);
        let s: f64 = ta.data.iter().sum();
        let n = ta.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    /// Per-row softmax over valid columns. Every row must see at least one
    /// valid column.
    pub fn row_softmax_masked(
        &mut self,
        a: VarId,
        valid: Rc<Vec<bool>>,
    ) -> Result<VarId, NetError> {
        let ta = self.val(a);
        assert_eq!(ta.cols, valid.len(), "softmax mask width mismatch");
        if !valid.iter().any(|v| *v) {
            return Err(NetError::EmptyAttention);
        }
        let mut data = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            let row = &ta.data[r * ta.cols..(r + 1) * ta.cols];
            let max = row
                .iter()
                .zip(valid.iter())
                .filter(|(_, v)| **v)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..ta.cols {
                if valid[c] {
                    let e = (row[c] - max).exp();
                    data.data[r * ta.cols + c] = e;
                    denom += e;
                }
            }
            for c in 0..ta.cols {
                data.data[r * ta.cols + c] /= denom;
            }
        }
        Ok(self.push(Op::RowSoftmaxMasked(a, valid), data))
    }

    /// Gather rows by index; `None` entries produce zero rows.
    pub fn gather_rows(&mut self, a: VarId, idx: Rc<Vec<Option<usize>>>) -> VarId {
        let ta = self.val(a);
        let mut data = Tensor::zeros(idx.len(), ta.cols);
        for (r, slot) in idx.iter().enumerate() {
            if let Some(src) = slot {
                let from = &ta.data[src * ta.cols..(src + 1) * ta.cols];
                data.data[r * ta.cols..(r + 1) * ta.cols].copy_from_slice(from);
            }
        }
        self.push(Op::GatherRows(a, idx), data)
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let cols = self.val(parts[0]).cols;
        let rows: usize = parts.iter().map(|p| self.val(*p).rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let tp = self.val(*p);
            assert_eq!(tp.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&tp.data);
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_vec(rows, cols, data))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.val(a), self.val(b));
        assert_eq!(ta.rows, tb.rows, "concat_cols height mismatch");
        let cols = ta.cols + tb.cols;
        let mut data = Tensor::zeros(ta.rows, cols);
        for r in 0..ta.rows {
            data.data[r * cols..r * cols + ta.cols]
                .copy_from_slice(&ta.data[r * ta.cols..(r + 1) * ta.cols]);
            data.data[r * cols + ta.cols..(r + 1) * cols]
                .copy_from_slice(&tb.data[r * tb.cols..(r + 1) * tb.cols]);
        }
        self.push(Op::ConcatCols(a, b), data)
    }

    pub fn slice_rows(&mut self, a: VarId, start: usize, end: usize) -> VarId {
        let ta = self.val(a);
        assert!(start < end && end <= ta.rows, "slice_rows out of range");
        let data = Tensor::from_vec(
            end - start,
            ta.cols,
            ta.data[start * ta.cols..end * ta.cols].to_vec(),
        );
        self.push(Op::SliceRows(a, start, end), data)
    }

    pub fn mask_rows(&mut self, a: VarId, keep: Rc<Vec<bool>>) -> VarId {
        let ta = self.val(a);
        assert_eq!(ta.rows, keep.len(), "mask_rows length mismatch");
        let mut data = ta.clone();
        for (r, k) in keep.iter().enumerate() {
            if !k {
                for c in 0..data.cols {
                    data.data[r * data.cols + c] = 0.0;
                }
            }
        }
        self.push(Op::MaskRows(a, keep), data)
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients for the
    /// parameter leaves as (vault slot, gradient) pairs.
    pub fn backward(&mut self, loss: VarId) -> Result<Vec<(usize, Tensor)>, NetError> {
        let lt = self.val(loss);
        if lt.len() != 1 {
            return Err(NetError::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", lt.shape()),
            });
        }
        if !lt.item().is_finite() {
            return Err(NetError::NonFinite("loss".into()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-insert for leaves and for value reuse below.
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = elementwise(&g, &self.nodes[b.0].data, |g, y| g * y);
                    let db = elementwise(&g, &self.nodes[a.0].data, |g, x| g * x);
                    accumulate(&mut grads, a, &da);
                    accumulate(&mut grads, b, &db);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let tb = &self.nodes[b.0].data;
                    let ta = &self.nodes[a.0].data;
                    let da = elementwise(&g, tb, |g, y| g / y);
                    let mut db = Tensor::zeros(g.rows, g.cols);
                    for idx in 0..g.data.len() {
                        db.data[idx] = -g.data[idx] * ta.data[idx] / (tb.data[idx] * tb.data[idx]);
                    }
                    accumulate(&mut grads, a, &da);
                    accumulate(&mut grads, b, &db);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    accumulate(&mut grads, a, &g);
                    let mut dr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            dr.data[c] += g.data[r * g.cols + c];
                        }
                    }
                    accumulate(&mut grads, row, &dr);
                }
                Op::Scale(a, k) => {
                    let da =
                        Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * k).collect());
                    accumulate(&mut grads, *a, &da);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, &g),
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul(&self.nodes[b.0].data.transpose());
                    let db = self.nodes[a.0].data.transpose().matmul(&g);
                    accumulate(&mut grads, a, &da);
                    accumulate(&mut grads, b, &db);
                }
                Op::Transpose(a) => {
                    let da = g.transpose();
                    accumulate(&mut grads, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = &node.data;
                    let da = elementwise(&g, y, |g, s| g * s * (1.0 - s));
                    accumulate(&mut grads, *a, &da);
                }
                Op::Tanh(a) => {
                    let y = &node.data;
                    let da = elementwise(&g, y, |g, t| g * (1.0 - t * t));
                    accumulate(&mut grads, *a, &da);
                }
                Op::Softplus(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].data;
                    let da = elementwise(&g, x, |g, x| g / (1.0 + (-x).exp()));
                    accumulate(&mut grads, a, &da);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].data;
                    let da = elementwise(&g, x, |g, x| g / x);
                    accumulate(&mut grads, a, &da);
                }
                Op::Abs(a) => {
                    let a = *a;
                    let x = &self.nodes[a.0].data;
                    let da = elementwise(&g, x, |g, x| g * sign(x));
                    accumulate(&mut grads, a, &da);
                }
                Op::Clamp(a, lo, hi) => {
                    let a = *a;
                    let (lo, hi) = (*lo, *hi);
                    let x = &self.nodes[a.0].data;
                    let da = elementwise(&g, x, |g, x| if x > lo && x < hi { g } else { 0.0 });
                    accumulate(&mut grads, a, &da);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let s = g.item();
                    let ta = &self.nodes[a.0].data;
                    let da = Tensor::from_vec(ta.rows, ta.cols, vec![s; ta.len()]);
                    accumulate(&mut grads, a, &da);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let ta = &self.nodes[a.0].data;
                    let s = g.item() / ta.len() as f64;
                    let da = Tensor::from_vec(ta.rows, ta.cols, vec![s; ta.len()]);
                    accumulate(&mut grads, a, &da);
                }
                Op::RowSoftmaxMasked(a, valid) => {
                    let a = *a;
                    let s = &node.data;
                    let mut da = Tensor::zeros(s.rows, s.cols);
                    for r in 0..s.rows {
                        let mut dot = 0.0;
                        for c in 0..s.cols {
                            dot += g.data[r * s.cols + c] * s.data[r * s.cols + c];
                        }
                        for c in 0..s.cols {
                            if valid[c] {
                                let sv = s.data[r * s.cols + c];
                                da.data[r * s.cols + c] = sv * (g.data[r * s.cols + c] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, a, &da);
                }
                Op::GatherRows(a, idx) => {
                    let a = *a;
                    let ta = &self.nodes[a.0].data;
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    for (r, slot) in idx.iter().enumerate() {
                        if let Some(src) = slot {
                            for c in 0..ta.cols {
                                da.data[src * ta.cols + c] += g.data[r * ta.cols + c];
                            }
                        }
                    }
                    accumulate(&mut grads, a, &da);
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].data.rows;
                        let cols = self.nodes[p.0].data.cols;
                        let dp = Tensor::from_vec(
                            rows,
                            cols,
                            g.data[offset * cols..(offset + rows) * cols].to_vec(),
                        );
                        accumulate(&mut grads, p, &dp);
                        offset += rows;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ca, cb) = (self.nodes[a.0].data.cols, self.nodes[b.0].data.cols);
                    let rows = g.rows;
                    let mut da = Tensor::zeros(rows, ca);
                    let mut db = Tensor::zeros(rows, cb);
                    for r in 0..rows {
                        da.data[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data[r * g.cols..r * g.cols + ca]);
                        db.data[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g.data[r * g.cols + ca..(r + 1) * g.cols]);
                    }
                    accumulate(&mut grads, a, &da);
                    accumulate(&mut grads, b, &db);
                }
                Op::SliceRows(a, start, _end) => {
                    let (a, start) = (*a, *start);
                    let ta = &self.nodes[a.0].data;
                    let mut da = Tensor::zeros(ta.rows, ta.cols);
                    da.data[start * ta.cols..start * ta.cols + g.data.len()]
                        .copy_from_slice(&g.data);
                    accumulate(&mut grads, a, &da);
                }
                Op::MaskRows(a, keep) => {
                    let a = *a;
                    let mut da = g.clone();
                    for (r, k) in keep.iter().enumerate() {
                        if !k {
                            for c in 0..da.cols {
                                da.data[r * da.cols + c] = 0.0;
                            }
                        }
                    }
                    accumulate(&mut grads, a, &da);
                }
            }
        }

        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().take(n) {
            if let Op::Leaf { param: Some(slot) } = node.op {
                if let Some(g) = grads[i].take() {
                    out.push((slot, g));
                }
            }
        }
        Ok(out)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(g.shape(), other.shape());
    Tensor::from_vec(
        g.rows,
        g.cols,
        g.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
    )
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, g: &Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(&g.data) {
                *e += v;
            }
        }
        slot => *slot = Some(g.clone()),
    }
}
