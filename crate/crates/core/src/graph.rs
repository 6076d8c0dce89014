//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and enough bookkeeping to push gradients back to its inputs. One graph
//! is built per document and thrown away afterwards. Trainable arrays live in a
//! [`ParamStore`] that the graph borrows immutably, so any number of graphs can
//! read the same parameters concurrently.

use std::collections::HashMap;

use crate::tensor::{gemm, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable arrays, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`]. Parameters that
/// received no gradient stay `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, materializing zeros of the parameter's shape.
    pub fn get_or_zeros(&self, store: &ParamStore, id: ParamId) -> Matrix {
        self.grads[id.0].clone().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        })
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix {
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.grads.iter().position(|g| g.as_ref().is_some_and(|m| !m.is_finite())).map(ParamId)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    BroadcastRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    SliceRows(Var, usize),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    SumRows(Var),
    NegLogPick { x: Var, index: usize, clamp: f64 },
    Bce { p: Var, label: f64, clamp: f64 },
    SumScalars(Vec<Var>),
}

struct Node {
    /// `None` only for parameter leaves, whose value lives in the store.
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// Rows `ids` of parameter `param`, stacked. Panics on an out-of-range id;
    /// callers validate ids first.
    pub fn gather(&mut self, param: ParamId, ids: &[usize]) -> Var {
        let table = self.params.get(param);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(out, Op::Gather { param, ids: ids.to_vec() }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulNT(a, b), ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise op on mismatched shapes");
        Matrix::from_vec(x.rows(), x.cols(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Adds the `1×c` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols()), r.shape(), "add_row shape");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by the `1×c` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols()), r.shape(), "mul_row shape");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    /// Stacks `n` copies of the `1×c` row `row`.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "broadcast_rows expects a row vector");
        let mut out = Matrix::zeros(n, r.cols());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(r.data());
        }
        let ng = self.ng(row);
        self.push(out, Op::BroadcastRows(row), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// `[a | b]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows(), y.rows(), "concat_cols row mismatch");
        let mut out = Matrix::zeros(x.rows(), x.cols() + y.cols());
        for r in 0..x.rows() {
            out.row_mut(r)[..x.cols()].copy_from_slice(x.row(r));
            out.row_mut(r)[x.cols()..].copy_from_slice(y.row(r));
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatCols(a, b), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_rows(start, end);
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    /// Row-wise softmax. Columns with `valid_cols[c] == false` get probability
    /// zero; rows with `valid_rows[r] == false` come out all-zero. Every valid
    /// row must keep at least one valid column.
    pub fn softmax(&mut self, a: Var, valid_cols: Option<&[bool]>, valid_rows: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            if valid_rows.is_some_and(|m| !m[r]) {
                continue;
            }
            let row = x.row(r);
            let ok = |c: usize| valid_cols.is_none_or(|m| m[c]);
            let max = (0..row.len()).filter(|&c| ok(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} has no valid column");
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..row.len() {
                if ok(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Per-row standardization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let n = x.cols() as f64;
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm { x: a, inv_std }, ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Column-wise maximum over the rows flagged valid (all rows when `valid`
    /// is `None`). Ties go to the lowest row. Panics if no row is valid.
    pub fn max_pool_rows(&mut self, a: Var, valid: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let rows: Vec<usize> = (0..x.rows()).filter(|&r| valid.is_none_or(|m| m[r])).collect();
        assert!(!rows.is_empty(), "max pooling over zero valid rows");
        let mut out = Matrix::zeros(1, x.cols());
        let mut argmax = vec![rows[0]; x.cols()];
        for c in 0..x.cols() {
            let mut best = x.get(rows[0], c);
            for &r in &rows[1..] {
                if x.get(r, c) > best {
                    best = x.get(r, c);
                    argmax[c] = r;
                }
            }
            out.set(0, c, best);
        }
        let ng = self.ng(a);
        self.push(out, Op::MaxPoolRows { x: a, argmax }, ng)
    }

    /// Column-wise sum over all rows.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    /// `-ln(max(p[index], clamp))` for a `1×c` probability row.
    pub fn neg_log_pick(&mut self, probs: Var, index: usize, clamp: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.rows(), 1, "neg_log_pick expects a row vector");
        let v = -p.get(0, index).max(clamp).ln();
        let ng = self.ng(probs);
        self.push(Matrix::scalar(v), Op::NegLogPick { x: probs, index, clamp }, ng)
    }

    /// Binary cross-entropy of a `1×1` probability against `label`, with the
    /// probability clamped to `[clamp, 1 - clamp]`.
    pub fn bce(&mut self, p: Var, label: f64, clamp: f64) -> Var {
        let pc = self.scalar(p).clamp(clamp, 1.0 - clamp);
        let v = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        let ng = self.ng(p);
        self.push(Matrix::scalar(v), Op::Bce { p, label, clamp }, ng)
    }

    /// Sum of `1×1` nodes; an empty slice gives the constant 0.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let v = parts.iter().map(|&p| self.scalar(p)).sum();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Matrix::scalar(v), Op::SumScalars(parts.to_vec()), ng)
    }

    /// Gradients of the `1×1` node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar");
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.slot(*id, g.shape()).add_assign(&g),
                Op::Gather { param, ids } => {
                    let shape = self.params.get(*param).shape();
                    let slot = out.slot(*param, shape);
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, v) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        let slot = grad_slot(&mut grads, *a, self.shape(*a));
                        gemm(1.0, &g, false, bv, true, 1.0, slot);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let slot = grad_slot(&mut grads, *b, self.shape(*b));
                        gemm(1.0, av, true, &g, false, 1.0, slot);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        let slot = grad_slot(&mut grads, *a, self.shape(*a));
                        gemm(1.0, &g, false, bv, false, 1.0, slot);
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let slot = grad_slot(&mut grads, *b, self.shape(*b));
                        gemm(1.0, &g, true, av, false, 1.0, slot);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, &g.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let d = hadamard(&g, self.value(*b));
                        self.acc(&mut grads, *a, &d);
                    }
                    if self.ng(*b) {
                        let d = hadamard(&g, self.value(*a));
                        self.acc(&mut grads, *b, &d);
                    }
                }
                Op::Scale(a, s) => self.acc(&mut grads, *a, &g.map(|v| v * s)),
                Op::AddRow(a, row) => {
                    self.acc(&mut grads, *a, &g);
                    if self.ng(*row) {
                        self.acc(&mut grads, *row, &col_sums(&g));
                    }
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    if self.ng(*a) {
                        let mut d = g.clone();
                        for i in 0..d.rows() {
                            for (o, b) in d.row_mut(i).iter_mut().zip(r.data()) {
                                *o *= b;
                            }
                        }
                        self.acc(&mut grads, *a, &d);
                    }
                    if self.ng(*row) {
                        let d = col_sums(&hadamard(&g, self.value(*a)));
                        self.acc(&mut grads, *row, &d);
                    }
                }
                Op::BroadcastRows(row) => self.acc(&mut grads, *row, &col_sums(&g)),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.shape(p).0;
                        if self.ng(p) {
                            self.acc(&mut grads, p, &g.slice_rows(start, start + n));
                        }
                        start += n;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let split = |lo: usize, hi: usize| {
                        let mut m = Matrix::zeros(g.rows(), hi - lo);
                        for r in 0..g.rows() {
                            m.row_mut(r).copy_from_slice(&g.row(r)[lo..hi]);
                        }
                        m
                    };
                    if self.ng(*a) {
                        self.acc(&mut grads, *a, &split(0, ca));
                    }
                    if self.ng(*b) {
                        self.acc(&mut grads, *b, &split(ca, g.cols()));
                    }
                }
                Op::SliceRows(a, start) => {
                    let slot = grad_slot(&mut grads, *a, self.shape(*a));
                    for r in 0..g.rows() {
                        for (s, v) in slot.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let s = node.value.as_ref().expect("softmax value");
                    let mut d = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let dot: f64 = sr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in d.row_mut(r).iter_mut().zip(sr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    self.acc(&mut grads, *a, &d);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = node.value.as_ref().expect("layer norm value");
                    let n = y.cols() as f64;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = yr.iter().zip(gr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    self.acc(&mut grads, *x, &d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = Matrix::from_vec(
                        x.rows(),
                        x.cols(),
                        x.data().iter().zip(g.data()).map(|(&v, &q)| q * gelu_grad(v)).collect(),
                    );
                    self.acc(&mut grads, *a, &d);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("tanh value");
                    let d = Matrix::from_vec(
                        y.rows(),
                        y.cols(),
                        y.data().iter().zip(g.data()).map(|(&t, &q)| q * (1.0 - t * t)).collect(),
                    );
                    self.acc(&mut grads, *a, &d);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let d = Matrix::from_vec(
                        y.rows(),
                        y.cols(),
                        y.data().iter().zip(g.data()).map(|(&s, &q)| q * s * (1.0 - s)).collect(),
                    );
                    self.acc(&mut grads, *a, &d);
                }
                Op::MaxPoolRows { x, argmax } => {
                    let slot = grad_slot(&mut grads, *x, self.shape(*x));
                    for (c, &r) in argmax.iter().enumerate() {
                        let v = slot.get(r, c) + g.get(0, c);
                        slot.set(r, c, v);
                    }
                }
                Op::SumRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let slot = grad_slot(&mut grads, *a, (rows, cols));
                    for r in 0..rows {
                        for (s, v) in slot.row_mut(r).iter_mut().zip(g.data()) {
                            *s += v;
                        }
                    }
                }
                Op::NegLogPick { x, index, clamp } => {
                    let p = self.value(*x).get(0, *index);
                    if p > *clamp {
                        let slot = grad_slot(&mut grads, *x, self.shape(*x));
                        let v = slot.get(0, *index) - g.item() / p;
                        slot.set(0, *index, v);
                    }
                }
                Op::Bce { p, label, clamp } => {
                    let pv = self.scalar(*p);
                    if pv > *clamp && pv < 1.0 - clamp {
                        let d = g.item() * (-label / pv + (1.0 - label) / (1.0 - pv));
                        self.acc(&mut grads, *p, &Matrix::scalar(d));
                    }
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        self.acc(&mut grads, p, &g);
                    }
                }
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
        if self.ng(v) {
            grad_slot(grads, v, self.shape(v)).add_assign(g);
        }
    }
}

fn grad_slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_vec(a.rows(), a.cols(), a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect())
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` with respect to every entry of parameter `id`.
    fn numeric(store: &ParamStore, id: ParamId, f: &dyn Fn(&mut Graph) -> Var) -> Matrix {
        let eps = 1e-6;
        let base = store.get(id).clone();
        let mut out = Matrix::zeros(base.rows(), base.cols());
        for i in 0..base.data().len() {
            let mut s = store.clone();
            s.get_mut(id).data_mut()[i] += eps;
            let mut g = Graph::new(&s);
            let v = f(&mut g);
            let plus = g.scalar(v);
            let mut s = store.clone();
            s.get_mut(id).data_mut()[i] -= eps;
            let mut g = Graph::new(&s);
            let v = f(&mut g);
            let minus = g.scalar(v);
            out.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out
    }

    fn check(store: &ParamStore, f: &dyn Fn(&mut Graph) -> Var) {
        let mut g = Graph::new(store);
        let loss = f(&mut g);
        let grads = g.backward(loss);
        for id in store.ids() {
            let analytic = grads.get_or_zeros(store, id);
            let num = numeric(store, id, f);
            for (a, n) in analytic.data().iter().zip(num.data()) {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{}: analytic {a} vs numeric {n}", store.name(id));
            }
        }
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Matrix::from_vec(3, 4, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.31).collect()));
        s.add("b", Matrix::from_vec(4, 2, (0..8).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.17).collect()));
        s.add("r", Matrix::from_vec(1, 4, vec![0.3, -0.2, 0.9, 0.1]));
        s
    }

    #[test]
    fn dense_chain_gradients() {
        let s = store();
        check(&s, &|g| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let r = g.param(ParamId(2));
            let x = g.add_row(a, r);
            let x = g.layer_norm(x);
            let x = g.mul_row(x, r);
            let x = g.gelu(x);
            let y = g.matmul(x, b);
            let y = g.tanh(y);
            let z = g.matmul_nt(y, y);
            let p = g.softmax(z, None, None);
            let l1 = g.row(p, 1);
            let l1 = g.neg_log_pick(l1, 2, 1e-12);
            let pooled = g.max_pool_rows(a, None);
            let summed = g.sum_rows(a);
            let both = g.concat_cols(pooled, summed);
            let h = g.sigmoid(both);
            let hs = g.sum_rows(h);
            let q = g.matmul_nt(hs, hs);
            let q = g.scale(q, 0.01);
            let q = g.sigmoid(q);
            let l2 = g.bce(q, 1.0, 1e-7);
            g.sum_scalars(&[l1, l2])
        });
    }

    #[test]
    fn masked_softmax_and_gather_gradients() {
        let s = store();
        check(&s, &|g| {
            let rows = g.gather(ParamId(0), &[2, 0, 2]);
            let top = g.slice_rows(rows, 0, 2);
            let stacked = g.concat_rows(&[top, rows]);
            let scores = g.matmul_nt(stacked, stacked);
            let mask = [true, false, true, true, false];
            let p = g.softmax(scores, Some(&mask), Some(&mask));
            let r = g.row(p, 3);
            let l = g.neg_log_pick(r, 0, 1e-12);
            let w = g.param(ParamId(1));
            let r3 = g.param(ParamId(2));
            let b = g.broadcast_rows(r3, 3);
            let x = g.sub(rows, b);
            let x = g.mul(x, rows);
            let x = g.matmul(x, w);
            let xs = g.sum_rows(x);
            let xs = g.matmul_nt(xs, xs);
            g.sum_scalars(&[l, xs])
        });
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 5.0, 2.0], vec![0.0, 0.0, 0.0]]));
        let p = g.softmax(x, Some(&[true, false, true]), Some(&[true, false]));
        let v = g.value(p);
        assert_eq!(v.get(0, 1), 0.0);
        assert!((v.get(0, 0) + v.get(0, 2) - 1.0).abs() < 1e-15);
        assert_eq!(v.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_breaks_ties_to_lowest_row() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0], vec![9.0, 0.0]]));
        let p = g.max_pool_rows(x, Some(&[true, true, false]));
        assert_eq!(g.value(p).data(), &[1.0, 3.0]);
    }
}
