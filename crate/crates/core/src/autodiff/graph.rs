//! Recorded computation over [`Tensor`]s and its reverse pass.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value; [`Graph::backward`] walks the nodes in
//! reverse order once and returns gradients for every parameter the loss
//! touched.

use std::collections::HashMap;

use super::tensor::gemm;
use super::{AutodiffError, Gradients, ParamId, ParameterStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Softmax(Var),
    LogProb(Var, Vec<Option<usize>>),
    Entropy(Var, Vec<bool>),
    Sum(Var),
    WeightedSum(Var, Tensor),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    BlockMatMulABt(Var, Var, usize),
    BlockMatMul(Var, Var, usize),
    SegmentSum(Var, Vec<f64>, usize),
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
    /// Extra activation kept for the reverse pass (log-probabilities).
    saved: Option<Tensor>,
}

/// Tape of recorded operations bound to one parameter store.
pub struct Graph<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    consumed: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes checked")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            requires_grad,
            saved: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value, false)
    }

    /// Leaf whose gradient is reported through [`Gradients::input`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
            requires_grad: true,
            saved: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        gemm(ta, false, tb, false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, c), out, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(Op::AddScalar(a), out, rg)
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut out = ta.clone();
        let r = tr.data();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Op::AddRow(a, row), out, rg))
    }

    /// Scales row `i` of `a` by `col[i]` for a `rows × 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch("mul_col", ta, tc));
        }
        let mut out = ta.clone();
        for i in 0..out.rows() {
            let s = tc.data()[i];
            out.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(&[a, col]);
        Ok(self.push(Op::MulCol(a, col), out, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(super::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(Op::Clamp(a, lo, hi), out, rg)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("minimum", a, b)?;
        let out = zip_map(self.value(a), self.value(b), f64::min);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Minimum(a, b), out, rg))
    }

    /// Row-wise softmax. Entries with `mask[i] == false` (row-major, same
    /// length as `a`) are excluded and come out exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(AutodiffError::MaskLength {
                    expected: ta.len(),
                    found: m.len(),
                });
            }
        }
        let (rows, cols) = ta.shape();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let x = ta.row(i);
            let keep = |j: usize| mask.is_none_or(|m| m[i * cols + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in x.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::FullyMaskedRow { row: i });
            }
            let o = out.row_mut(i);
            let mut total = 0.0;
            for j in 0..cols {
                if keep(j) {
                    o[j] = (x[j] - max).exp();
                    total += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Softmax(a), out, rg))
    }

    fn log_softmax(t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for i in 0..t.rows() {
            let row = out.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        out
    }

    /// Log-probability of `actions[i]` under the categorical distribution
    /// with logits in row `i`. Rows with `None` produce 0 and no gradient.
    pub fn log_prob(&mut self, logits: Var, actions: &[Option<usize>]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        if actions.len() != t.rows() {
            return Err(AutodiffError::MaskLength {
                expected: t.rows(),
                found: actions.len(),
            });
        }
        for (row, a) in actions.iter().enumerate() {
            if let Some(a) = *a {
                if a >= t.cols() {
                    return Err(AutodiffError::ActionOutOfRange {
                        row,
                        action: a,
                        choices: t.cols(),
                    });
                }
            }
        }
        let logp = Self::log_softmax(t);
        let out = Tensor::column(
            &actions
                .iter()
                .enumerate()
                .map(|(i, a)| a.map_or(0.0, |a| logp.get(i, a)))
                .collect::<Vec<_>>(),
        );
        let rg = self.rg(&[logits]);
        let v = self.push(Op::LogProb(logits, actions.to_vec()), out, rg);
        self.nodes[v.0].saved = Some(logp);
        Ok(v)
    }

    /// Entropy of each row's categorical distribution; rows with
    /// `rows[i] == false` produce 0.
    pub fn entropy(&mut self, logits: Var, rows: &[bool]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        if rows.len() != t.rows() {
            return Err(AutodiffError::MaskLength {
                expected: t.rows(),
                found: rows.len(),
            });
        }
        let logp = Self::log_softmax(t);
        let out = Tensor::column(
            &(0..t.rows())
                .map(|i| {
                    if rows[i] {
                        -logp.row(i).iter().map(|&l| l.exp() * l).sum::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<_>>(),
        );
        let rg = self.rg(&[logits]);
        let v = self.push(Op::Entropy(logits, rows.to_vec()), out, rg);
        self.nodes[v.0].saved = Some(logp);
        Ok(v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `sum(a ⊙ weights)` for constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.shape() != weights.shape() {
            return Err(mismatch("weighted_sum", ta, &weights));
        }
        let s = ta.data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Op::WeightedSum(a, weights), Tensor::scalar(s), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Empty("concat_cols"));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, rg))
    }

    fn check_blocks(&self, op: &'static str, a: &Tensor, b: &Tensor, block: usize) -> Result<(), AutodiffError> {
        if block == 0 || a.rows() != b.rows() || a.rows() % block != 0 {
            return Err(mismatch(op, a, b));
        }
        Ok(())
    }

    /// For consecutive groups of `block` rows, `out_t = a_t · b_tᵀ`.
    /// Inputs are `R × d`; the output is `R × block`.
    pub fn block_matmul_abt(&mut self, a: Var, b: Var, block: usize) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        self.check_blocks("block_matmul_abt", ta, tb, block)?;
        if ta.cols() != tb.cols() {
            return Err(mismatch("block_matmul_abt", ta, tb));
        }
        let mut out = Tensor::zeros(ta.rows(), block);
        for t in 0..ta.rows() / block {
            for i in 0..block {
                let ai = ta.row(t * block + i);
                for j in 0..block {
                    let bj = tb.row(t * block + j);
                    let dot: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                    out.set(t * block + i, j, dot);
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::BlockMatMulABt(a, b, block), out, rg))
    }

    /// For consecutive groups of `block` rows, `out_t = m_t · h_t` with
    /// `m` of shape `R × block` and `h` of shape `R × d`.
    pub fn block_matmul(&mut self, m: Var, h: Var, block: usize) -> Result<Var, AutodiffError> {
        let (tm, th) = (self.value(m), self.value(h));
        self.check_blocks("block_matmul", tm, th, block)?;
        if tm.cols() != block {
            return Err(mismatch("block_matmul", tm, th));
        }
        let d = th.cols();
        let mut out = Tensor::zeros(th.rows(), d);
        for t in 0..th.rows() / block {
            for i in 0..block {
                let mi = tm.row(t * block + i);
                let o = out.row_mut(t * block + i);
                for (j, &w) in mi.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (ov, hv) in o.iter_mut().zip(th.row(t * block + j)) {
                        *ov += w * hv;
                    }
                }
            }
        }
        let rg = self.rg(&[m, h]);
        Ok(self.push(Op::BlockMatMul(m, h, block), out, rg))
    }

    /// Weighted sum of each group of `block` rows: `out[t] = Σ_i w[t·block+i]·a[t·block+i]`.
    pub fn segment_sum(&mut self, a: Var, weights: &[f64], block: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if block == 0 || ta.rows() % block != 0 || weights.len() != ta.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_sum",
                left: ta.shape(),
                right: (weights.len(), block),
            });
        }
        let groups = ta.rows() / block;
        let mut out = Tensor::zeros(groups, ta.cols());
        for t in 0..groups {
            for i in 0..block {
                let r = t * block + i;
                let w = weights[r];
                for (o, x) in out.row_mut(t).iter_mut().zip(ta.row(r)) {
                    *o += w * x;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SegmentSum(a, weights.to_vec(), block), out, rg))
    }

    /// Reverse pass from a `1 × 1` loss. A graph supports exactly one call.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar { shape });
        }
        self.consumed = true;

        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let node = &self.nodes[idx];
        let y = self.value(Var(idx));
        match &node.op {
            Op::Input => {
                out.inputs.insert(idx, g);
            }
            Op::Param(id) => match &mut out.params[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(&g, false, tb, true, &mut ga, false);
                    self.acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(ta, true, &g, false, &mut gb, false);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.acc(grads, *b, g.clone());
                }
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    self.acc(grads, *b, g.map(|v| -v));
                }
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, zip_map(&g, self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, zip_map(&g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => self.acc(grads, *a, g),
            Op::AddRow(a, row) => {
                if self.wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *row, gr);
                }
                self.acc(grads, *a, g);
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                if self.wants(*col) {
                    let gc: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(ta.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.acc(grads, *col, Tensor::column(&gc));
                }
                if self.wants(*a) {
                    let mut ga = g;
                    for i in 0..ga.rows() {
                        let s = tc.data()[i];
                        ga.row_mut(i).iter_mut().for_each(|v| *v *= s);
                    }
                    self.acc(grads, *a, ga);
                }
            }
            Op::Tanh(a) => self.acc(grads, *a, zip_map(&g, y, |g, y| g * (1.0 - y * y))),
            Op::Relu(a) => {
                let ga = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.acc(grads, *a, ga)
            }
            Op::Exp(a) => self.acc(grads, *a, zip_map(&g, y, |g, y| g * y)),
            Op::Clamp(a, lo, hi) => {
                let ga = zip_map(&g, self.value(*a), |g, x| if x > *lo && x < *hi { g } else { 0.0 });
                self.acc(grads, *a, ga)
            }
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = Tensor::new(
                        g.rows(),
                        g.cols(),
                        (0..g.len())
                            .map(|k| if ta.data()[k] <= tb.data()[k] { g.data()[k] } else { 0.0 })
                            .collect(),
                    )
                    .expect("shape");
                    self.acc(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = Tensor::new(
                        g.rows(),
                        g.cols(),
                        (0..g.len())
                            .map(|k| if ta.data()[k] <= tb.data()[k] { 0.0 } else { g.data()[k] })
                            .collect(),
                    )
                    .expect("shape");
                    self.acc(grads, *b, gb);
                }
            }
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LogProb(logits, actions) => {
                let logp = node.saved.as_ref().expect("saved log-probabilities");
                let mut ga = Tensor::zeros(logp.rows(), logp.cols());
                for (i, a) in actions.iter().enumerate() {
                    let Some(a) = *a else { continue };
                    let gi = g.data()[i];
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        let p = logp.get(i, j).exp();
                        *o = gi * (if j == a { 1.0 } else { 0.0 } - p);
                    }
                }
                self.acc(grads, *logits, ga);
            }
            Op::Entropy(logits, rows) => {
                let logp = node.saved.as_ref().expect("saved log-probabilities");
                let mut ga = Tensor::zeros(logp.rows(), logp.cols());
                for (i, &keep) in rows.iter().enumerate() {
                    if !keep {
                        continue;
                    }
                    let h = y.data()[i];
                    let gi = g.data()[i];
                    for (o, &l) in ga.row_mut(i).iter_mut().zip(logp.row(i)) {
                        *o = -gi * l.exp() * (l + h);
                    }
                }
                self.acc(grads, *logits, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.acc(grads, *a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::WeightedSum(a, w) => {
                let s = g.data()[0];
                self.acc(grads, *a, w.map(|v| v * s));
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                self.acc(grads, *a, g.reshaped(r, c).expect("same length"));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.wants(p) {
                        let gp = Tensor::from_fn(r, c, |i, j| g.get(i, off + j));
                        self.acc(grads, p, gp);
                    }
                    off += c;
                }
            }
            Op::BlockMatMulABt(a, b, block) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = *block;
                let d = ta.cols();
                let mut ga = Tensor::zeros(ta.rows(), d);
                let mut gb = Tensor::zeros(tb.rows(), d);
                for t in 0..ta.rows() / n {
                    for i in 0..n {
                        let r = t * n + i;
                        for j in 0..n {
                            let s = t * n + j;
                            let gij = g.get(r, j);
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                ga.data_mut()[r * d + k] += gij * tb.data()[s * d + k];
                                gb.data_mut()[s * d + k] += gij * ta.data()[r * d + k];
                            }
                        }
                    }
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::BlockMatMul(m, h, block) => {
                let (tm, th) = (self.value(*m), self.value(*h));
                let n = *block;
                let d = th.cols();
                let mut gm = Tensor::zeros(tm.rows(), n);
                let mut gh = Tensor::zeros(th.rows(), d);
                for t in 0..th.rows() / n {
                    for i in 0..n {
                        let r = t * n + i;
                        let gr = g.row(r);
                        for j in 0..n {
                            let s = t * n + j;
                            let hs = th.row(s);
                            let dot: f64 = gr.iter().zip(hs).map(|(x, y)| x * y).sum();
                            gm.data_mut()[r * n + j] = dot;
                            let w = tm.get(r, j);
                            if w != 0.0 {
                                for (o, gv) in gh.row_mut(s).iter_mut().zip(gr) {
                                    *o += w * gv;
                                }
                            }
                        }
                    }
                }
                self.acc(grads, *m, gm);
                self.acc(grads, *h, gh);
            }
            Op::SegmentSum(a, weights, block) => {
                let (r, c) = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (row, &w) in weights.iter().enumerate() {
                    let t = row / block;
                    for (o, gv) in ga.row_mut(row).iter_mut().zip(g.row(t)) {
                        *o = w * gv;
                    }
                }
                self.acc(grads, *a, ga);
            }
        }
    }
}
