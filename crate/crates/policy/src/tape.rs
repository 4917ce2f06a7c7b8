//! Minimal define-by-run reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as a node. Parameters are leaves that
//! borrow their value from a [`ParamStore`]; constants are leaves with no
//! gradient. [`Tape::backward`] returns gradients for every parameter that
//! the loss depends on.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} vs {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self::from_vec(1, data.len(), data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rows `[start, start + n)`.
    pub fn slice_rows(&self, start: usize, n: usize) -> Matrix {
        Matrix::from_vec(n, self.cols, self.data[start * self.cols..(start + n) * self.cols].to_vec())
    }

    pub fn vstack(parts: &[&Matrix]) -> Matrix {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            assert_eq!(m.cols, cols);
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Matrix::from_vec(rows, cols, data)
    }
}

/// `a (r x k) * b (k x c)`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul {}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (r x k) * b^T` where `b` is `c x k`.
fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * b` where `a` is `k x r` and `b` is `k x c`.
fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows);
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for (i, &av) in a.row(k).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Matrix plus a broadcast `1 x c` row.
    AddRow(Var, Var),
    /// Matrix times a broadcast `1 x c` row.
    MulRow(Var, Var),
    /// Matrix plus a broadcast `1 x 1` scalar.
    AddScalarVar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    /// Row-wise normalisation without affine terms.
    LayerNorm(Var, f64),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumCols(Var),
    SumAll(Var),
    Gather(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
}

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients indexed by [`ParamId`]; `None` where the loss does not depend
/// on the parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|m| m.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|m| m.data.iter().all(|g| g.is_finite()))
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether each ReLU input on the tape is positive, in recording order.
    /// Two evaluations with equal patterns lie on the same smooth piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data.iter().map(|&x| x > 0.0))
            .collect()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(m),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let m = self.value(a);
        let out = Matrix::from_vec(m.rows, m.cols, m.data.iter().map(|&x| f(x)).collect());
        self.push(out, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!((ma.rows, ma.cols), (mb.rows, mb.cols), "elementwise shape mismatch");
        let data = ma.data.iter().zip(&mb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(ma.rows, ma.cols, data);
        self.push(out, op, &[a, b])
    }

    fn broadcast_row(&mut self, a: Var, row: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (m, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, m.cols), "row broadcast shape mismatch");
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.rows {
            data.extend(m.row(i).iter().zip(&r.data).map(|(&x, &y)| f(x, y)));
        }
        let out = Matrix::from_vec(m.rows, m.cols, data);
        self.push(out, op, &[a, row])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.broadcast_row(a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.broadcast_row(a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        self.map(a, Op::AddScalarVar(a, s), |x| x + sv);
        // `map` only records `a` as an input; fix up gradient tracking for `s`
        let last = self.nodes.len() - 1;
        self.nodes[last].needs_grad |= self.nodes[s.0].needs_grad;
        Var(last)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows, m.cols);
        for i in 0..m.rows {
            let row = m.row(i);
            let (mean, rstd) = row_stats(row, eps);
            for (o, &x) in out.data[i * m.cols..(i + 1) * m.cols].iter_mut().zip(row) {
                *o = (x - mean) * rstd;
            }
        }
        self.push(out, Op::LayerNorm(a, eps), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows, m.cols);
        for i in 0..m.rows {
            let row = m.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out.data[i * m.cols..(i + 1) * m.cols];
            let mut sum = 0.0;
            for (o, &x) in o.iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in o.iter_mut() {
                *o /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = transpose(m);
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Matrix::vstack(&mats);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&v| self.value(v).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows);
                out.data[i * cols + off..i * cols + off + m.cols].copy_from_slice(m.row(i));
                off += m.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `[start, start + n)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, n: usize) -> Var {
        let m = self.value(a);
        assert!(start + n <= m.cols);
        let mut data = Vec::with_capacity(m.rows * n);
        for i in 0..m.rows {
            data.extend_from_slice(&m.row(i)[start..start + n]);
        }
        let out = Matrix::from_vec(m.rows, n, data);
        self.push(out, Op::SliceCols(a, start), &[a])
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols);
        for i in 0..m.rows {
            for (o, &x) in out.data.iter_mut().zip(m.row(i)) {
                *o += x;
            }
        }
        let n = m.rows as f64;
        for o in out.data.iter_mut() {
            *o /= n;
        }
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let data = (0..m.rows).map(|i| m.row(i).iter().sum()).collect();
        let out = Matrix::from_vec(m.rows, 1, data);
        self.push(out, Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Output element `k` is element `indices[k]` of `a` (flat index).
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(indices.len(), rows * cols);
        let m = self.value(a);
        let data = indices.iter().map(|&i| m.data[i]).collect();
        let out = Matrix::from_vec(rows, cols, data);
        self.push(out, Op::Gather(a, indices), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, d: Matrix| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            };
            let out_val = self.value(Var(i));
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(id) = node.value {
                        out.grads[id.0] = Some(g);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        send(*a, matmul_nt(&g, self.value(*b)));
                    }
                    if self.nodes[b.0].needs_grad {
                        send(*b, matmul_tn(self.value(*a), &g));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    send(*a, g);
                    send(*b, neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    send(*a, elementwise(&g, vb, |g, y| g * y));
                    send(*b, elementwise(&g, va, |g, x| g * x));
                }
                Op::AddRow(a, row) => {
                    send(*row, column_sums(&g));
                    send(*a, g);
                }
                Op::MulRow(a, row) => {
                    let (va, vr) = (self.value(*a), self.value(*row));
                    let mut da = g.clone();
                    for r in 0..da.rows {
                        for (d, &y) in da.data[r * da.cols..(r + 1) * da.cols].iter_mut().zip(&vr.data) {
                            *d *= y;
                        }
                    }
                    send(*row, column_sums(&elementwise(&g, va, |g, x| g * x)));
                    send(*a, da);
                }
                Op::AddScalarVar(a, s) => {
                    send(*s, Matrix::scalar(g.data.iter().sum()));
                    send(*a, g);
                }
                Op::Scale(a, s) => send(*a, scaled(&g, *s)),
                Op::AddScalar(a) => send(*a, g),
                Op::Relu(a) => {
                    let va = self.value(*a);
                    send(*a, elementwise(&g, va, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Tanh(a) => send(*a, elementwise(&g, out_val, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => send(*a, elementwise(&g, out_val, |g, y| g * y * (1.0 - y))),
                Op::Exp(a) => send(*a, elementwise(&g, out_val, |g, y| g * y)),
                Op::Square(a) => {
                    let va = self.value(*a);
                    send(*a, elementwise(&g, va, |g, x| 2.0 * g * x));
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.value(*a);
                    let (lo, hi) = (*lo, *hi);
                    send(*a, elementwise(&g, va, |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 }));
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = Matrix::zeros(g.rows, g.cols);
                    let mut db = Matrix::zeros(g.rows, g.cols);
                    for k in 0..g.len() {
                        if va.data[k] <= vb.data[k] {
                            da.data[k] = g.data[k];
                        } else {
                            db.data[k] = g.data[k];
                        }
                    }
                    send(*a, da);
                    send(*b, db);
                }
                Op::LayerNorm(a, eps) => {
                    let va = self.value(*a);
                    let n = va.cols as f64;
                    let mut da = Matrix::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        let (_, rstd) = row_stats(va.row(r), *eps);
                        let y = out_val.row(r);
                        let gr = g.row(r);
                        let mean_g: f64 = gr.iter().sum::<f64>() / n;
                        let mean_gy: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..va.cols {
                            da.data[r * va.cols + c] = rstd * (gr[c] - mean_g - y[c] * mean_gy);
                        }
                    }
                    send(*a, da);
                }
                Op::SoftmaxRows(a) => {
                    let mut da = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let y = out_val.row(r);
                        let gr = g.row(r);
                        let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols {
                            da.data[r * g.cols + c] = y[c] * (gr[c] - dot);
                        }
                    }
                    send(*a, da);
                }
                Op::Transpose(a) => send(*a, transpose(&g)),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).rows;
                        send(*p, g.slice_rows(start, n));
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).cols;
                        let mut d = Matrix::zeros(g.rows, n);
                        for r in 0..g.rows {
                            d.data[r * n..(r + 1) * n].copy_from_slice(&g.row(r)[off..off + n]);
                        }
                        send(*p, d);
                        off += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut d = Matrix::zeros(va.rows, va.cols);
                    for r in 0..g.rows {
                        d.data[r * va.cols + start..r * va.cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    send(*a, d);
                }
                Op::MeanRows(a) => {
                    let va = self.value(*a);
                    let n = va.rows as f64;
                    let mut d = Matrix::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        for (x, &gv) in d.data[r * va.cols..(r + 1) * va.cols].iter_mut().zip(&g.data) {
                            *x = gv / n;
                        }
                    }
                    send(*a, d);
                }
                Op::SumCols(a) => {
                    let va = self.value(*a);
                    let mut d = Matrix::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        d.data[r * va.cols..(r + 1) * va.cols].fill(g.data[r]);
                    }
                    send(*a, d);
                }
                Op::SumAll(a) => {
                    let va = self.value(*a);
                    send(*a, Matrix::filled(va.rows, va.cols, g.data[0]));
                }
                Op::Gather(a, indices) => {
                    let va = self.value(*a);
                    let mut d = Matrix::zeros(va.rows, va.cols);
                    for (k, &idx) in indices.iter().enumerate() {
                        d.data[idx] += g.data[k];
                    }
                    send(*a, d);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn transpose(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.cols, m.rows);
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.data[c * m.rows + r] = m.data[r * m.cols + c];
        }
    }
    out
}

fn elementwise(g: &Matrix, v: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(g.rows, g.cols, g.data.iter().zip(&v.data).map(|(&a, &b)| f(a, b)).collect())
}

fn scaled(g: &Matrix, s: f64) -> Matrix {
    Matrix::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * s).collect())
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, &x) in out.data.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Compares backward against central differences for a loss builder.
    fn check(store: &mut ParamStore, build: impl Fn(&mut Tape) -> Var) {
        let grads = {
            let mut tape = Tape::new(store);
            let loss = build(&mut tape);
            tape.backward(loss)
        };
        let h = 1e-6;
        for p in 0..store.len() {
            for k in 0..store.params[p].value.len() {
                let orig = store.params[p].value.data[k];
                store.params[p].value.data[k] = orig + h;
                let up = {
                    let mut t = Tape::new(store);
                    let l = build(&mut t);
                    t.value(l).item()
                };
                store.params[p].value.data[k] = orig - h;
                let down = {
                    let mut t = Tape::new(store);
                    let l = build(&mut t);
                    t.value(l).item()
                };
                store.params[p].value.data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.grads[p].as_ref().map_or(0.0, |g| g.data[k]);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-5, "param {p}[{k}]: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn matmul_helpers_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 4, &mut rng);
        let b = random(5, 4, &mut rng);
        let nt = matmul_nt(&a, &b);
        assert_eq!(nt, matmul(&a, &transpose(&b)));
        let c = random(3, 2, &mut rng);
        let tn = matmul_tn(&a, &c);
        let direct = matmul(&transpose(&a), &c);
        for (x, y) in tn.data.iter().zip(&direct.data) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_of_every_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::default();
        let a = store.add("a", random(3, 4, &mut rng));
        let b = store.add("b", random(4, 2, &mut rng));
        let row = store.add("row", random(1, 4, &mut rng));
        let s = store.add("s", random(1, 1, &mut rng));
        let table = store.add("table", random(2, 5, &mut rng));
        check(&mut store, |t| {
            let a = t.param(a);
            let b = t.param(b);
            let row = t.param(row);
            let s = t.param(s);
            let table = t.param(table);
            let x = t.add_row(a, row);
            let x = t.mul_row(x, row);
            let x = t.layer_norm(x, 1e-5);
            let y = t.matmul(x, b);
            let y = t.tanh(y);
            let z = t.sigmoid(y);
            let w = t.exp(z);
            let w = t.softmax_rows(w);
            let sq = t.square(w);
            let tr = t.transpose(sq);
            let tt = t.matmul(sq, tr);
            let c = t.concat_cols(&[tt, y]);
            let c = t.concat_rows(&[c, c]);
            let m = t.mean_rows(c);
            let sc = t.slice_cols(m, 1, 2);
            let g = t.gather(table, vec![0, 3, 7, 9, 3, 1], 3, 2);
            let sg = t.sum_cols(g);
            let sl = t.add_scalar_var(sg, s);
            let cl = t.clamp(sl, -0.3, 0.4);
            let mn = t.minimum(sl, cl);
            let r = t.relu(mn);
            let m2 = t.mul(r, sl);
            let d = t.sub(m2, sl);
            let e = t.scale(d, 1.7);
            let e = t.add_scalar(e, 0.3);
            let s1 = t.sum_all(e);
            let s2 = t.mean_all(sc);
            t.add(s1, s2)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut store = ParamStore::default();
        let p = store.add("p", Matrix::row_vector(vec![1.0, 2.0]));
        let q = store.add("q", Matrix::row_vector(vec![3.0, 4.0]));
        let tape_store = store.clone();
        let mut t = Tape::new(&tape_store);
        let pv = t.param(p);
        let c = t.constant(Matrix::row_vector(vec![5.0, 6.0]));
        let y = t.mul(pv, c);
        let l = t.sum_all(y);
        let g = t.backward(l);
        assert_eq!(g.get(p).unwrap().data, vec![5.0, 6.0]);
        assert!(g.get(q).is_none());
    }
}
