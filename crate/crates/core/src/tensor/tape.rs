//! Reverse-mode tape over dense matrices.
//!
//! Every forward op pushes a node holding its output value and how it was
//! produced. [`Tape::backward`] walks the nodes in reverse and accumulates
//! vector-Jacobian products. Only the primitives the matching network needs
//! are supported.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{matmul_nt_acc, matmul_tn_acc};
use super::{DenseMatrix, ParamId, ParamStore};
use crate::error::{mismatch, Error, Result};
use crate::math;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    Gather(usize, Vec<usize>),
    SliceRows(usize, usize),
    RowDot { a: usize, b: usize, heads: usize },
    SegmentSoftmax(usize, Vec<usize>),
    ScaleBlocks(usize, usize),
    SegmentSum(usize, Vec<usize>),
    SegmentMean(usize, Vec<usize>),
    Scale(usize, f64),
    Sum(usize),
    Column(usize, usize),
    SquaredError(usize, DenseMatrix),
    Bce { prob: usize, target: DenseMatrix, clamp: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, usize>,
    flops: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<DenseMatrix>,
    nodes: Vec<Option<DenseMatrix>>,
    tape: u64,
}

impl Gradients {
    /// Gradient of a parameter; zero if it did not take part in the pass.
    pub fn param(&self, id: ParamId) -> &DenseMatrix {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    /// Gradient with respect to an intermediate or input node.
    pub fn wrt(&self, v: Var) -> Result<Option<&DenseMatrix>> {
        if v.tape != self.tape {
            return Err(Error::StaleReference);
        }
        Ok(self.nodes.get(v.idx).and_then(Option::as_ref))
    }
}

fn segments_ok(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
    if offsets.first() != Some(&0) || offsets.last() != Some(&rows) || !monotone {
        return Err(mismatch(
            op,
            format!("monotone offsets from 0 to {rows}"),
            format!("{} offsets", offsets.len()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating-point operations performed by the forward ops recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::StaleReference);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: DenseMatrix,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn value(&self, v: Var) -> Result<&DenseMatrix> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, value: DenseMatrix) -> Result<Var> {
        let value = value.ensure_finite("constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Input whose gradient is tracked and can be read with [`Gradients::wrt`].
    pub fn input(&mut self, value: DenseMatrix) -> Result<Var> {
        let value = value.ensure_finite("input")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Leaf for a learnable parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&idx) = self.params.get(&id) {
            return Ok(Var { idx, tape: self.id });
        }
        if id.0 >= store.len() {
            return Err(Error::StaleReference);
        }
        let value = store.get(id).clone().ensure_finite("param")?;
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v.idx);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (x, w) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out = x.matmul(w)?;
        self.flops += 2 * (x.rows() * x.cols() * w.cols()) as u64;
        self.push_checked("matmul", out, Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.shape() != y.shape() {
            return Err(mismatch(
                "add",
                format!("{:?}", x.shape()),
                format!("{:?}", y.shape()),
            ));
        }
        let mut out = x.clone();
        out.add_assign(y);
        self.flops += out.len() as u64;
        self.push_checked("add", out, Op::Add(ia, ib), &[ia, ib])
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (m, b) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if b.rows() != 1 || b.cols() != m.cols() {
            return Err(mismatch(
                "add_row",
                format!("1x{}", m.cols()),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.flops += out.len() as u64;
        self.push_checked("add_row", out, Op::AddRow(ix, ib), &[ix, ib])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.map(|v| if v > 0.0 { v } else { 0.0 });
        self.flops += out.len() as u64;
        self.push_checked("relu", out, Op::Relu(ix), &[ix])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.map(sigmoid);
        self.flops += 4 * out.len() as u64;
        self.push_checked("sigmoid", out, Op::Sigmoid(ix), &[ix])
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let mut out = self.nodes[ix].value.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.flops += 4 * out.len() as u64;
        self.push_checked("softmax_rows", out, Op::SoftmaxRows(ix), &[ix])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.rows() != y.rows() {
            return Err(mismatch(
                "concat_cols",
                format!("{} rows", x.rows()),
                format!("{}", y.rows()),
            ));
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let out = DenseMatrix::from_vec(x.rows(), cols, data)?;
        self.push_checked("concat_cols", out, Op::ConcatCols(ia, ib), &[ia, ib])
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let cols = idx.first().map_or(0, |&i| self.nodes[i].value.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let m = &self.nodes[i].value;
            if m.cols() != cols {
                return Err(mismatch(
                    "concat_rows",
                    format!("{cols} columns"),
                    format!("{}", m.cols()),
                ));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let out = DenseMatrix::from_vec(rows, cols, data)?;
        self.push_checked("concat_rows", out, Op::ConcatRows(idx.clone()), &idx)
    }

    /// `out[r] = x[index[r]]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let m = &self.nodes[ix].value;
        let mut data = Vec::with_capacity(index.len() * m.cols());
        for &r in index {
            if r >= m.rows() {
                return Err(mismatch(
                    "gather_rows",
                    format!("row index < {}", m.rows()),
                    format!("{r}"),
                ));
            }
            data.extend_from_slice(m.row(r));
        }
        let out = DenseMatrix::from_vec(index.len(), m.cols(), data)?;
        self.push_checked("gather_rows", out, Op::Gather(ix, index.to_vec()), &[ix])
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let m = &self.nodes[ix].value;
        if start + len > m.rows() {
            return Err(mismatch(
                "slice_rows",
                format!("at most {} rows", m.rows()),
                format!("{start}..{}", start + len),
            ));
        }
        let cols = m.cols();
        let out = DenseMatrix::from_parts(len, cols, m.data()[start * cols..(start + len) * cols].to_vec());
        self.push_checked("slice_rows", out, Op::SliceRows(ix, start), &[ix])
    }

    /// Per-row, per-head dot product: `out[r][h] = Σ_{k in head h} a[r][k]·b[r][k]`.
    pub fn row_dot(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (x, y) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if x.shape() != y.shape() || heads == 0 || x.cols() % heads != 0 {
            return Err(mismatch(
                "row_dot",
                format!("equal shapes with columns divisible by {heads}"),
                format!("{:?} and {:?}", x.shape(), y.shape()),
            ));
        }
        let width = x.cols() / heads;
        let mut out = DenseMatrix::zeros(x.rows(), heads);
        for r in 0..x.rows() {
            let (xr, yr) = (x.row(r), y.row(r));
            for h in 0..heads {
                let s = h * width;
                let dot: f64 = xr[s..s + width]
                    .iter()
                    .zip(&yr[s..s + width])
                    .map(|(p, q)| p * q)
                    .sum();
                out.set(r, h, dot);
            }
        }
        self.flops += 2 * x.len() as u64;
        self.push_checked("row_dot", out, Op::RowDot { a: ia, b: ib, heads }, &[ia, ib])
    }

    /// Softmax over the rows of each segment `offsets[s]..offsets[s+1]`,
    /// independently per column. Empty segments are allowed.
    pub fn segment_softmax(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let mut out = self.nodes[ix].value.clone();
        segments_ok("segment_softmax", offsets, out.rows())?;
        let cols = out.cols();
        let mut buf = Vec::new();
        for w in offsets.windows(2) {
            for c in 0..cols {
                buf.clear();
                buf.extend((w[0]..w[1]).map(|r| out.get(r, c)));
                softmax_in_place(&mut buf);
                for (k, r) in (w[0]..w[1]).enumerate() {
                    out.set(r, c, buf[k]);
                }
            }
        }
        self.flops += 4 * out.len() as u64;
        self.push_checked(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(ix, offsets.to_vec()),
            &[ix],
        )
    }

    /// Scales each head block of `x` by the matching column of `w`
    /// (`w` is `rows x heads`).
    pub fn scale_blocks(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (m, s) = (&self.nodes[ix].value, &self.nodes[iw].value);
        if m.rows() != s.rows() || s.cols() == 0 || m.cols() % s.cols() != 0 {
            return Err(mismatch(
                "scale_blocks",
                format!("{} rows and a head count dividing {}", m.rows(), m.cols()),
                format!("{:?}", s.shape()),
            ));
        }
        let width = m.cols() / s.cols();
        let mut out = m.clone();
        for r in 0..out.rows() {
            let sr = s.row(r).to_vec();
            for (k, o) in out.row_mut(r).iter_mut().enumerate() {
                *o *= sr[k / width];
            }
        }
        self.flops += out.len() as u64;
        self.push_checked("scale_blocks", out, Op::ScaleBlocks(ix, iw), &[ix, iw])
    }

    /// Row sums over each segment; empty segments give zero rows.
    pub fn segment_sum(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let out = segment_reduce(&self.nodes[ix].value, offsets, false, "segment_sum")?;
        self.flops += self.nodes[ix].value.len() as u64;
        self.push_checked("segment_sum", out, Op::SegmentSum(ix, offsets.to_vec()), &[ix])
    }

    /// Row means over each segment; empty segments give zero rows.
    pub fn segment_mean(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let out = segment_reduce(&self.nodes[ix].value, offsets, true, "segment_mean")?;
        self.flops += self.nodes[ix].value.len() as u64;
        self.push_checked("segment_mean", out, Op::SegmentMean(ix, offsets.to_vec()), &[ix])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.nodes[ix].value.map(|v| v * factor);
        self.flops += out.len() as u64;
        self.push_checked("scale", out, Op::Scale(ix, factor), &[ix])
    }

    /// Sum of all entries as a `1x1` matrix.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.nodes[ix].value.sum();
        self.flops += self.nodes[ix].value.len() as u64;
        self.push_checked("sum", DenseMatrix::scalar(s), Op::Sum(ix), &[ix])
    }

    /// Column `c` of `x` as an `rows x 1` matrix.
    pub fn column(&mut self, x: Var, c: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let m = &self.nodes[ix].value;
        if c >= m.cols() {
            return Err(mismatch("column", format!("column < {}", m.cols()), format!("{c}")));
        }
        let vals: Vec<f64> = (0..m.rows()).map(|r| m.get(r, c)).collect();
        self.push_checked("column", DenseMatrix::column_vector(&vals), Op::Column(ix, c), &[ix])
    }

    /// `Σ (pred - target)²` as a `1x1` matrix.
    pub fn squared_error_sum(&mut self, pred: Var, target: &DenseMatrix) -> Result<Var> {
        let ip = self.check(pred)?;
        let p = &self.nodes[ip].value;
        if p.shape() != target.shape() {
            return Err(mismatch(
                "squared_error_sum",
                format!("{:?}", p.shape()),
                format!("{:?}", target.shape()),
            ));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.flops += 3 * p.len() as u64;
        self.push_checked(
            "squared_error_sum",
            DenseMatrix::scalar(s),
            Op::SquaredError(ip, target.clone()),
            &[ip],
        )
    }

    /// Binary cross-entropy summed over all entries,
    /// `-Σ [t ln p + (1 - t) ln(1 - p)]`, with `p` clamped to
    /// `[clamp, 1 - clamp]`.
    pub fn bce_sum(&mut self, prob: Var, target: &DenseMatrix, clamp: f64) -> Result<Var> {
        let ip = self.check(prob)?;
        let p = &self.nodes[ip].value;
        if p.shape() != target.shape() {
            return Err(mismatch(
                "bce_sum",
                format!("{:?}", p.shape()),
                format!("{:?}", target.shape()),
            ));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&pv, &t)| {
                let pc = clamp_prob(pv, clamp);
                -(t * math::ln(pc) + (1.0 - t) * math::ln(1.0 - pc))
            })
            .sum();
        self.flops += 6 * p.len() as u64;
        self.push_checked(
            "bce_sum",
            DenseMatrix::scalar(s),
            Op::Bce {
                prob: ip,
                target: target.clone(),
                clamp,
            },
            &[ip],
        )
    }

    /// Differentiates the `1x1` node `loss` with respect to every parameter
    /// in `store` and every tracked node on the tape.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let li = self.check(loss)?;
        let (rows, cols) = self.nodes[li].value.shape();
        if rows != 1 || cols != 1 {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[li] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        let mut params = store.zeros_like();
        for (&pid, &node) in &self.params {
            if let Some(g) = &grads[node] {
                if pid.0 < params.len() && params[pid.0].shape() == g.shape() {
                    params[pid.0].add_assign(g);
                } else {
                    return Err(Error::StaleReference);
                }
            }
        }
        Ok(Gradients {
            params,
            nodes: grads,
            tape: self.id,
        })
    }

    fn propagate(&self, i: usize, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let want = |j: usize| self.nodes[j].requires_grad;
        let acc = |j: usize, d: DenseMatrix, grads: &mut [Option<DenseMatrix>]| match &mut grads[j] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (xa, xb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if want(*a) {
                    let mut d = DenseMatrix::zeros(xa.rows(), xa.cols());
                    matmul_nt_acc(g, xb, &mut d);
                    acc(*a, d, grads);
                }
                if want(*b) {
                    let mut d = DenseMatrix::zeros(xb.rows(), xb.cols());
                    matmul_tn_acc(xa, g, &mut d);
                    acc(*b, d, grads);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    acc(*a, g.clone(), grads);
                }
                if want(*b) {
                    acc(*b, g.clone(), grads);
                }
            }
            Op::AddRow(x, b) => {
                if want(*x) {
                    acc(*x, g.clone(), grads);
                }
                if want(*b) {
                    let mut d = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, d, grads);
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (o, &out) in d.data_mut().iter_mut().zip(y.data()) {
                    if out <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (o, &s) in d.data_mut().iter_mut().zip(y.data()) {
                    *o *= s * (1.0 - s);
                }
                acc(*x, d, grads);
            }
            Op::SoftmaxRows(x) => {
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    softmax_backward(y.row(r), g.row(r), d.row_mut(r));
                }
                acc(*x, d, grads);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let cb = self.nodes[*b].value.cols();
                if want(*a) {
                    let mut d = DenseMatrix::zeros(g.rows(), ca);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    }
                    acc(*a, d, grads);
                }
                if want(*b) {
                    let mut d = DenseMatrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(*b, d, grads);
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.nodes[p].value.rows();
                    if want(p) {
                        let cols = g.cols();
                        let slice = g.data()[start * cols..(start + rows) * cols].to_vec();
                        acc(p, DenseMatrix::from_parts(rows, cols, slice), grads);
                    }
                    start += rows;
                }
            }
            Op::Gather(x, index) => {
                let src = &self.nodes[*x].value;
                let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                for (r, &s) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(s).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, d, grads);
            }
            Op::SliceRows(x, start) => {
                let src = &self.nodes[*x].value;
                let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                d.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                acc(*x, d, grads);
            }
            Op::RowDot { a, b, heads } => {
                let (xa, xb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let width = xa.cols() / heads;
                let scaled = |other: &DenseMatrix| {
                    let mut d = other.clone();
                    for r in 0..d.rows() {
                        let gr = g.row(r).to_vec();
                        for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o *= gr[k / width];
                        }
                    }
                    d
                };
                if want(*a) {
                    acc(*a, scaled(xb), grads);
                }
                if want(*b) {
                    acc(*b, scaled(xa), grads);
                }
            }
            Op::SegmentSoftmax(x, offsets) => {
                let mut d = DenseMatrix::zeros(y.rows(), y.cols());
                let (mut ys, mut gs, mut ds) = (Vec::new(), Vec::new(), Vec::new());
                for w in offsets.windows(2) {
                    for c in 0..y.cols() {
                        ys.clear();
                        gs.clear();
                        ys.extend((w[0]..w[1]).map(|r| y.get(r, c)));
                        gs.extend((w[0]..w[1]).map(|r| g.get(r, c)));
                        ds.clear();
                        ds.resize(ys.len(), 0.0);
                        softmax_backward(&ys, &gs, &mut ds);
                        for (k, r) in (w[0]..w[1]).enumerate() {
                            d.set(r, c, ds[k]);
                        }
                    }
                }
                acc(*x, d, grads);
            }
            Op::ScaleBlocks(x, w) => {
                let (m, s) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let width = m.cols() / s.cols();
                if want(*x) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let sr = s.row(r).to_vec();
                        for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o *= sr[k / width];
                        }
                    }
                    acc(*x, d, grads);
                }
                if want(*w) {
                    let mut d = DenseMatrix::zeros(s.rows(), s.cols());
                    for r in 0..m.rows() {
                        for (k, (gv, mv)) in g.row(r).iter().zip(m.row(r)).enumerate() {
                            let h = k / width;
                            let cur = d.get(r, h);
                            d.set(r, h, cur + gv * mv);
                        }
                    }
                    acc(*w, d, grads);
                }
            }
            Op::SegmentSum(x, offsets) | Op::SegmentMean(x, offsets) => {
                let mean = matches!(node.op, Op::SegmentMean(..));
                let src = &self.nodes[*x].value;
                let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                for (s, w) in offsets.windows(2).enumerate() {
                    let len = w[1] - w[0];
                    if len == 0 {
                        continue;
                    }
                    let factor = if mean { 1.0 / len as f64 } else { 1.0 };
                    for r in w[0]..w[1] {
                        for (o, v) in d.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o = v * factor;
                        }
                    }
                }
                acc(*x, d, grads);
            }
            Op::Scale(x, factor) => acc(*x, g.map(|v| v * factor), grads),
            Op::Sum(x) => {
                let src = &self.nodes[*x].value;
                acc(*x, DenseMatrix::filled(src.rows(), src.cols(), g.data()[0]), grads);
            }
            Op::Column(x, c) => {
                let src = &self.nodes[*x].value;
                let mut d = DenseMatrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    d.set(r, *c, g.get(r, 0));
                }
                acc(*x, d, grads);
            }
            Op::SquaredError(p, target) => {
                let pv = &self.nodes[*p].value;
                let scale = g.data()[0];
                let mut d = pv.clone();
                for (o, t) in d.data_mut().iter_mut().zip(target.data()) {
                    *o = 2.0 * (*o - t) * scale;
                }
                acc(*p, d, grads);
            }
            Op::Bce { prob, target, clamp } => {
                let pv = &self.nodes[*prob].value;
                let scale = g.data()[0];
                let mut d = pv.clone();
                for (o, &t) in d.data_mut().iter_mut().zip(target.data()) {
                    let p = *o;
                    *o = if p <= *clamp || p >= 1.0 - clamp {
                        0.0
                    } else {
                        scale * (-t / p + (1.0 - t) / (1.0 - p))
                    };
                }
                acc(*prob, d, grads);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + math::exp(-v))
    } else {
        let e = math::exp(v);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn clamp_prob(p: f64, clamp: f64) -> f64 {
    p.max(clamp).min(1.0 - clamp)
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = math::exp(*x - max);
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &yv), &gv) in out.iter_mut().zip(y).zip(g) {
        *o = yv * (gv - dot);
    }
}

fn segment_reduce(
    m: &DenseMatrix,
    offsets: &[usize],
    mean: bool,
    op: &'static str,
) -> Result<DenseMatrix> {
    segments_ok(op, offsets, m.rows())?;
    let mut out = DenseMatrix::zeros(offsets.len() - 1, m.cols());
    for (s, w) in offsets.windows(2).enumerate() {
        let row = out.row_mut(s);
        for r in w[0]..w[1] {
            for (o, v) in row.iter_mut().zip(m.row(r)) {
                *o += v;
            }
        }
        if mean && w[1] > w[0] {
            let n = (w[1] - w[0]) as f64;
            for o in row.iter_mut() {
                *o /= n;
            }
        }
    }
    Ok(out)
}
