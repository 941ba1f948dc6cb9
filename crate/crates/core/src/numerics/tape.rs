//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] and each one becomes a single leaf no
//! matter how often it is used, so shared weights accumulate gradient in
//! one place.

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};

pub type Matrix = Array2<f64>;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// broadcast a `1 x n` row over every row
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    /// per-row inverse standard deviations; the node value is the normalized input
    LayerNorm(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    SumSq(Var),
    /// target index and cached probabilities
    CrossEntropy(Var, usize, Matrix),
}

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct parameter leaves on this tape.
    pub fn param_leaf_count(&self) -> usize {
        self.param_vars.iter().filter(|v| v.is_some()).count()
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let m = Matrix::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(m)
    }

    /// The leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    /// Row-wise softmax. Entries where `allowed` is false get weight 0;
    /// every row must keep at least one allowed entry.
    pub fn softmax(&mut self, a: Var, allowed: Option<&Array2<bool>>) -> Var {
        let mut out = self.value(a).clone();
        for (r, mut row) in out.rows_mut().into_iter().enumerate() {
            let ok = |c: usize| allowed.is_none_or(|m| m[[r, c]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(c, _)| ok(*c))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, v) in row.iter_mut().enumerate() {
                *v = if ok(c) { (*v - max).exp() } else { 0.0 };
                total += *v;
            }
            row.mapv_inplace(|v| v / total);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * r);
            inv.push(r);
        }
        self.push(out, Op::LayerNorm(a, inv))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&t.row(r));
        }
        self.push(out, Op::GatherRows(table, rows.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / x.nrows() as f64;
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).iter().map(|v| v * v).sum());
        self.push(out, Op::SumSq(a))
    }

    /// Softmax cross-entropy of a `1 x n` logit row against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = z.mapv(|v| (v - max).exp());
        let total = p.sum();
        p.mapv_inplace(|v| v / total);
        let loss = -(p[[0, target]].ln());
        let loss = if loss.is_finite() {
            loss
        } else {
            // underflowed probability: fall back to the log-sum-exp form
            max + total.ln() - z[[0, target]]
        };
        self.push(Matrix::from_elem((1, 1), loss), Op::CrossEntropy(logits, target, p))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every parameter
    /// leaf on the tape.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones((1, 1)));
        let mut out = Gradients::zeros_like(self.params);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = || self.value(Var(i));
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let drow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let da = &g * self.value(*row);
                    acc(&mut grads, *row, drow);
                    acc(&mut grads, *a, da);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Relu(a) => {
                    let mut da = g;
                    da.zip_mut_with(y(), |d, &o| {
                        if o <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Abs(a) => {
                    let mut da = g;
                    da.zip_mut_with(self.value(*a), |d, &x| *d *= sign(x));
                    acc(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let yv = y();
                    let mut da = &g * yv;
                    for (mut row, yrow) in da.rows_mut().into_iter().zip(yv.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |d, &p| *d -= p * dot);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm(a, inv) => {
                    let yv = y();
                    let mut da = g.clone();
                    for (r, mut row) in da.rows_mut().into_iter().enumerate() {
                        let n = row.len() as f64;
                        let yrow = yv.row(r);
                        let mean_g = row.sum() / n;
                        let mean_gy = row.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        row.zip_mut_with(&yrow, |d, &yy| *d = inv[r] * (*d - mean_g - yy * mean_gy));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + cols]).to_owned());
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut da = Matrix::zeros(self.value(*a).dim());
                    da.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let mut da = Matrix::zeros(self.value(*a).dim());
                    da.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, da);
                }
                Op::GatherRows(table, rows) => {
                    let mut dt = Matrix::zeros(self.value(*table).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = dt.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    let da = g.broadcast((rows, g.ncols())).expect("row broadcast").to_owned() / rows as f64;
                    acc(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let da = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, da);
                }
                Op::SumSq(a) => {
                    let da = self.value(*a) * (2.0 * g[[0, 0]]);
                    acc(&mut grads, *a, da);
                }
                Op::CrossEntropy(a, target, p) => {
                    let mut da = p.clone();
                    da[[0, *target]] -= 1.0;
                    acc(&mut grads, *a, da * g[[0, 0]]);
                }
            }
        }
        out
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

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::Init;
    use ndarray::array;

    /// Central differences of `f` with respect to every entry of param `id`.
    fn numeric(store: &ParamStore, id: ParamId, f: impl Fn(&ParamStore) -> f64) -> Matrix {
        let mut work = store.clone();
        let dim = store.value(id).dim();
        let mut out = Matrix::zeros(dim);
        let eps = 1e-6;
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = work.value(id)[[r, c]];
                work.value_mut(id)[[r, c]] = orig + eps;
                let up = f(&work);
                work.value_mut(id)[[r, c]] = orig - eps;
                let down = f(&work);
                work.value_mut(id)[[r, c]] = orig;
                out[[r, c]] = (up - down) / (2.0 * eps);
            }
        }
        out
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{a:?}\nvs\n{b:?}");
        }
    }

    #[test]
    fn every_op_differentiates() {
        let mut store = ParamStore::new(3);
        let a = store.add("a", &[3, 4], Init::Uniform(1.0)).unwrap();
        let b = store.add("b", &[4, 4], Init::Uniform(1.0)).unwrap();
        let r = store.add("r", &[4], Init::Uniform(1.0)).unwrap();
        let t = store.add("t", &[5, 4], Init::Uniform(1.0)).unwrap();
        let build = |s: &ParamStore| -> (f64, Gradients) {
            let mut tape = Tape::new(s);
            let (va, vb, vr, vt) = (tape.param(a), tape.param(b), tape.param(r), tape.param(t));
            let m = tape.matmul(va, vb);
            let m = tape.add_row(m, vr);
            let n = tape.layer_norm(m);
            let n = tape.mul_row(n, vr);
            let sm = tape.softmax(n, None);
            let mt = tape.matmul_t(sm, va);
            let g = tape.gather_rows(vt, &[0, 2, 2]);
            let cat = tape.concat_cols(&[mt, g]);
            let half = tape.slice_cols(cat, 1, 5);
            let rel = tape.relu(half);
            let ab = tape.abs(half);
            let sum = tape.add(rel, ab);
            let diff = tape.sub(sum, rel);
            let rows = tape.concat_rows(&[diff, va]);
            let top = tape.slice_rows(rows, 1, 4);
            let mean = tape.mean_rows(top);
            let ce = tape.cross_entropy(mean, 2);
            let sq = tape.sum_sq(top);
            let sc = tape.scale(sq, 0.1);
            let total = tape.add(ce, sc);
            let s2 = tape.sum(total);
            (tape.scalar(s2), tape.backward(s2))
        };
        let (_, grads) = build(&store);
        for id in [a, b, r, t] {
            let num = numeric(&store, id, |s| build(s).0);
            close(grads.get(id).unwrap(), &num, 1e-6);
        }
    }

    #[test]
    fn masked_softmax_rows() {
        let store = ParamStore::new(0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1.0, 2.0, 3.0], [0.5, 0.5, 0.5]]);
        let allowed = array![[true, false, true], [true, true, true]];
        let y = tape.softmax(x, Some(&allowed));
        let v = tape.value(y);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v.row(0).sum() - 1.0).abs() < 1e-12);
        assert!((v[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shared_param_single_leaf() {
        let mut store = ParamStore::new(0);
        let w = store.add("w", &[2, 2], Init::Ones).unwrap();
        let mut tape = Tape::new(&store);
        let a = tape.param(w);
        let b = tape.param(w);
        assert_eq!(a, b);
        let m = tape.matmul(a, b);
        let s = tape.sum(m);
        let g = tape.backward(s);
        // d/dW sum(W W) = 1 W^T + W^T 1 = 4 for all-ones 2x2
        assert!(g.get(w).unwrap().iter().all(|&v| (v - 4.0).abs() < 1e-12));
        assert_eq!(tape.param_leaf_count(), 1);
    }
}
