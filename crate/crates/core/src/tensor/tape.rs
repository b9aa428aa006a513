//! Reverse-mode tape.
//!
//! A [`Tape`] owns every intermediate value produced during one forward
//! pass. Operations return lightweight [`Var`] handles. [`Tape::backward`]
//! walks the records in exact reverse execution order and accumulates
//! adjoints additively; it may run once per tape.

use rand::Rng;

use super::{matmul_into, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    RowDot(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Threshold(Var, f64),
    SoftmaxRows(Var),
    MeanRows(Var),
    Sum(Var),
    Concat(Vec<Var>, Axis),
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>, Var),
    Reshape(Var),
    Pick(Var, usize, usize),
    CrossEntropy(Var, usize, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let [r, c] = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape")
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let mut value = ta.clone();
        value.add_assign(tb)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Scales row `i` of `a` by `col[i]`; `col` is `n x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta, tc));
        }
        let mut value = ta.clone();
        for r in 0..value.rows() {
            let s = tc.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        self.push("mul_col", value, Op::MulCol(a, col), &[a, col])
    }

    /// Per-row dot product, `n x c` with `n x c` gives `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("row_dot", ta, tb));
        }
        let data = (0..ta.rows())
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Tensor::from_vec(ta.rows(), 1, data)?;
        self.push("row_dot", value, Op::RowDot(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = map(self.value(a), |x| x * c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = map(self.value(a), f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = map(self.value(a), |x| x.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = map(self.value(a), sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = map(self.value(a), softplus);
        self.push("softplus", value, Op::Softplus(a), &[a])
    }

    /// Keeps `x` where `x > gamma`, zero elsewhere.
    pub fn threshold(&mut self, a: Var, gamma: f64) -> Result<Var> {
        let value = map(self.value(a), |x| if x > gamma { x } else { 0.0 });
        self.push("threshold", value, Op::Threshold(a, gamma), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let mut value = Tensor::zeros(ta.rows(), ta.cols());
        for r in 0..ta.rows() {
            softmax_row(ta.row(r), value.row_mut(r));
        }
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Column-wise mean over rows, `n x c` gives `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() == 0 {
            return Err(Error::invalid("mean_rows over zero rows"));
        }
        let mut value = Tensor::zeros(1, ta.cols());
        for r in 0..ta.rows() {
            for (o, x) in value.data_mut().iter_mut().zip(ta.row(r)) {
                *o += x;
            }
        }
        value.scale_in_place(1.0 / ta.rows() as f64);
        self.push("mean_rows", value, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let value = match axis {
            Axis::Cols => {
                let rows = self.value(*first).rows();
                let mut cols = 0;
                for p in parts {
                    let t = self.value(*p);
                    if t.rows() != rows {
                        return Err(shape_err("concat", self.value(*first), t));
                    }
                    cols += t.cols();
                }
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let mut offset = 0;
                    for p in parts {
                        let src = self.value(*p).row(r);
                        out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                        offset += src.len();
                    }
                }
                out
            }
            Axis::Rows => {
                let cols = self.value(*first).cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = self.value(*p);
                    if t.cols() != cols {
                        return Err(shape_err("concat", self.value(*first), t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::from_vec(rows, cols, data)?
            }
        };
        self.push("concat", value, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} not in [0, 1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    /// Dropout with a caller-supplied multiplicative mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::invalid("dropout mask length mismatch"));
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        self.push("dropout", value, Op::Dropout(a, mask), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let mut value = Tensor::zeros(indices.len(), ta.cols());
        for (out_r, &src) in indices.iter().enumerate() {
            if src >= ta.rows() {
                return Err(Error::OutOfRange {
                    kind: "row",
                    id: src,
                    count: ta.rows(),
                });
            }
            value.row_mut(out_r).copy_from_slice(ta.row(src));
        }
        self.push("gather_rows", value, Op::GatherRows(a, indices.to_vec()), &[a])
    }

    /// `target` with `values[e]` added into row `indices[e]` for every `e`.
    pub fn scatter_add_rows(&mut self, target: Var, indices: &[usize], values: Var) -> Result<Var> {
        let (tt, tv) = (self.value(target), self.value(values));
        if tv.rows() != indices.len() || tv.cols() != tt.cols() {
            return Err(shape_err("scatter_add_rows", tt, tv));
        }
        let mut value = tt.clone();
        for (e, &dst) in indices.iter().enumerate() {
            if dst >= tt.rows() {
                return Err(Error::OutOfRange {
                    kind: "row",
                    id: dst,
                    count: tt.rows(),
                });
            }
            for (o, x) in value.row_mut(dst).iter_mut().zip(tv.row(e)) {
                *o += x;
            }
        }
        self.push(
            "scatter_add_rows",
            value,
            Op::ScatterAddRows(target, indices.to_vec(), values),
            &[target, values],
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshape(rows, cols)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Single element `a[r][c]` as a `1 x 1` value.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let ta = self.value(a);
        if r >= ta.rows() || c >= ta.cols() {
            return Err(Error::OutOfRange {
                kind: "element",
                id: r * ta.cols() + c,
                count: ta.len(),
            });
        }
        let value = Tensor::scalar(ta.get(r, c));
        self.push("pick", value, Op::Pick(a, r, c), &[a])
    }

    /// `-log softmax(logits)[label]` for a `1 x R` row, max-subtracted.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rows() != 1 {
            return Err(Error::invalid("cross_entropy expects a single row of logits"));
        }
        if label >= tl.cols() {
            return Err(Error::OutOfRange {
                kind: "label",
                id: label,
                count: tl.cols(),
            });
        }
        let row = tl.row(0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - row[label];
        let mut probs = vec![0.0; row.len()];
        softmax_row(row, &mut probs);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, label, probs),
            &[logits],
        )
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward on an empty tape"));
        }
        if self.backward_done {
            return Err(Error::Tape("backward already ran; re-run the forward pass"));
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Tape("loss must be a 1x1 scalar"));
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.add_assign(&delta).expect("gradient shape"),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    let bt = tb.transpose();
                    matmul_into(g.data(), bt.data(), da.data_mut(), g.rows(), g.cols(), ta.cols());
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    let at = ta.transpose();
                    matmul_into(at.data(), g.data(), db.data_mut(), ta.cols(), ta.rows(), g.cols());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = zip_map(g, tb, |x, y| x * y);
                let db = zip_map(g, ta, |x, y| x * y);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let mut da = g.clone();
                let mut dc = Tensor::zeros(tc.rows(), 1);
                for r in 0..ta.rows() {
                    let s = tc.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    let d: f64 = g.row(r).iter().zip(ta.row(r)).map(|(x, y)| x * y).sum();
                    dc.set(r, 0, d);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *col, dc);
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut da = tb.clone();
                let mut db = ta.clone();
                for r in 0..ta.rows() {
                    let s = g.get(r, 0);
                    da.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    db.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, map(g, |x| x * c)),
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(g, out, |d, y| d * (1.0 - y * y))),
            Op::Relu(a) => {
                let da = zip_map(g, self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(g, out, |d, y| d * y * (1.0 - y))),
            Op::Softplus(a) => {
                let da = zip_map(g, self.value(*a), |d, x| d * sigmoid(x));
                self.accumulate(grads, *a, da);
            }
            Op::Threshold(a, gamma) => {
                let gamma = *gamma;
                let da = zip_map(g, self.value(*a), |d, x| if x > gamma { d } else { 0.0 });
                self.accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let mut da = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let dy = g.row(r);
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for (j, o) in da.row_mut(r).iter_mut().enumerate() {
                        *o = y[j] * (dy[j] - dot);
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let inv = 1.0 / ta.rows() as f64;
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    for (o, d) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = d * inv;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.get(0, 0)));
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Cols => {
                    let mut offset = 0;
                    for p in parts {
                        let [rows, cols] = self.shape(*p);
                        if self.nodes[p.0].requires_grad {
                            let mut dp = Tensor::zeros(rows, cols);
                            for r in 0..rows {
                                dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                            }
                            self.accumulate(grads, *p, dp);
                        }
                        offset += cols;
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let [rows, cols] = self.shape(*p);
                        if self.nodes[p.0].requires_grad {
                            let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                            let dp = Tensor::from_vec(rows, cols, data).expect("concat grad");
                            self.accumulate(grads, *p, dp);
                        }
                        offset += rows;
                    }
                }
            },
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                let da = Tensor::from_vec(g.rows(), g.cols(), data).expect("dropout grad");
                self.accumulate(grads, *a, da);
            }
            Op::GatherRows(a, indices) => {
                let [rows, cols] = self.shape(*a);
                let mut da = Tensor::zeros(rows, cols);
                for (e, &src) in indices.iter().enumerate() {
                    for (o, d) in da.row_mut(src).iter_mut().zip(g.row(e)) {
                        *o += d;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::ScatterAddRows(target, indices, values) => {
                self.accumulate(grads, *target, g.clone());
                if self.nodes[values.0].requires_grad {
                    let mut dv = Tensor::zeros(indices.len(), g.cols());
                    for (e, &dst) in indices.iter().enumerate() {
                        dv.row_mut(e).copy_from_slice(g.row(dst));
                    }
                    self.accumulate(grads, *values, dv);
                }
            }
            Op::Reshape(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, g.clone().reshape(r, c).expect("reshape grad"));
            }
            Op::Pick(a, r, c) => {
                let [rows, cols] = self.shape(*a);
                let mut da = Tensor::zeros(rows, cols);
                da.set(*r, *c, g.get(0, 0));
                self.accumulate(grads, *a, da);
            }
            Op::CrossEntropy(logits, label, probs) => {
                let scale = g.get(0, 0);
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                d[*label] -= scale;
                self.accumulate(grads, *logits, Tensor::row_vector(d));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}
