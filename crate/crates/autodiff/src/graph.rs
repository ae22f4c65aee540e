//! Append-only computation tape.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes in reverse append order, so an input is always finalised before its
//! gradient is propagated further. Gradients into a node consumed by several
//! ops are summed.

use crate::error::{AutodiffError, Result};
use crate::tensor::{axis_split, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleBy { x: Var, s: Var, idx: usize },
    AddRow(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    SliceWindow { x: Var, axis: usize, start: usize },
    GatherRows { table: Var, rows: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    RowNormalize { x: Var, eps: f64 },
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Dynamic tape, rebuilt for every batch.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`, or `None` when `v` does not
    /// influence the root or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.ndim() != 2 {
        return Err(AutodiffError::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(AutodiffError::Axis {
            op,
            axis,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q) = check_matrix("matmul", av)?;
        let (q2, r) = check_matrix("matmul", bv)?;
        if q != q2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let aik = ad[i * q + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[k * r..(k + 1) * r];
                for (o, &bkj) in row.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        let value = Tensor::new(vec![p, r], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, m) = check_matrix("transpose", xv)?;
        let d = xv.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = d[i * m + j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Transpose(x), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = map(self.value(x), |v| v * c);
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, c), value, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = map(self.value(x), |v| v + c);
        let rg = self.rg(&[x]);
        self.push(Op::AddScalar(x), value, rg)
    }

    /// `x * s[idx]`, where `s` is a (typically trainable) vector.
    pub fn scale_by(&mut self, x: Var, s: Var, idx: usize) -> Result<Var> {
        let sv = self.value(s);
        if idx >= sv.numel() {
            return Err(AutodiffError::Index {
                op: "scale_by",
                index: idx,
                extent: sv.numel(),
            });
        }
        let c = sv.data()[idx];
        let value = map(self.value(x), |v| v * c);
        let rg = self.rg(&[x, s]);
        Ok(self.push(Op::ScaleBy { x, s, idx }, value, rg))
    }

    /// Adds vector `r` (length d) to every row of matrix `a` (n×d).
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        let (n, d) = check_matrix("add_row", av)?;
        if rv.numel() != d {
            return Err(AutodiffError::Shape {
                op: "add_row",
                lhs: av.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let mut out = av.data().to_vec();
        for i in 0..n {
            for (o, &b) in out[i * d..(i + 1) * d].iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[a, r]);
        Ok(self.push(Op::AddRow(a, r), value, rg))
    }

    /// Scales row `i` of matrix `a` (n×d) by `c[i]` (c has n elements).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(c));
        let (n, d) = check_matrix("mul_col", av)?;
        if cv.numel() != n {
            return Err(AutodiffError::Shape {
                op: "mul_col",
                lhs: av.shape().to_vec(),
                rhs: cv.shape().to_vec(),
            });
        }
        let mut out = av.data().to_vec();
        for (i, &ci) in cv.data().iter().enumerate() {
            out[i * d..(i + 1) * d].iter_mut().for_each(|o| *o *= ci);
        }
        let value = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[a, c]);
        Ok(self.push(Op::MulCol(a, c), value, rg))
    }

    /// Repeats vector `x` as `n` rows.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        let d = xv.numel();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(xv.data());
        }
        let value = Tensor::new(vec![n, d], out).expect("n*d elements");
        let rg = self.rg(&[x]);
        self.push(Op::BroadcastRows(x), value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = map(self.value(x), |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(Op::Relu(x), value, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = map(self.value(x), stable_sigmoid);
        let rg = self.rg(&[x]);
        self.push(Op::Sigmoid(x), value, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = map(self.value(x), f64::exp);
        let rg = self.rg(&[x]);
        self.push(Op::Exp(x), value, rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = map(self.value(x), f64::ln);
        let rg = self.rg(&[x]);
        self.push(Op::Log(x), value, rg)
    }

    /// Clips into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = map(self.value(x), |v| v.clamp(lo, hi));
        let rg = self.rg(&[x]);
        self.push(Op::Clamp { x, lo, hi }, value, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Op::SumAll(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(AutodiffError::Empty("mean"));
        }
        let s: f64 = xv.data().iter().sum();
        let value = Tensor::scalar(s / xv.numel() as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MeanAll(x), value, rg))
    }

    fn reduce_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<(Vec<usize>, Vec<f64>)> {
        let xv = self.value(x);
        check_axis(op, xv, axis)?;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let d = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..n {
                let src = &d[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (t, &s) in dst.iter_mut().zip(src) {
                    *t += s;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok((shape, out))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, out) = self.reduce_axis(x, axis, "sum_axis")?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SumAxis { x, axis }, Tensor::new(shape, out)?, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, mut out) = self.reduce_axis(x, axis, "mean_axis")?;
        let n = self.value(x).shape()[axis];
        if n == 0 {
            return Err(AutodiffError::Empty("mean_axis"));
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MeanAxis { x, axis }, Tensor::new(shape, out)?, rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(AutodiffError::Empty("concat"))?;
        let base = self.value(*first).shape().to_vec();
        check_axis("concat", self.value(*first), axis)?;
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let n = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape(x), value, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.reshape(x, &[n]).expect("numel preserved")
    }

    /// Contiguous window `[start, start + len)` along `axis`.
    pub fn slice_window(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis("slice_window", xv, axis)?;
        let extent = xv.shape()[axis];
        if start + len > extent {
            return Err(AutodiffError::Index {
                op: "slice_window",
                index: start + len,
                extent,
            });
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let d = xv.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SliceWindow { x, axis, start }, value, rg))
    }

    /// Embedding lookup: row `rows[i]` of the 2-D `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, d) = check_matrix("gather_rows", tv)?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(AutodiffError::Index {
                    op: "gather_rows",
                    index: r,
                    extent: n,
                });
            }
            out.extend_from_slice(tv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Flat gather: output element `i` is `x.data[idx[i]]`, laid out in `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.numel();
        let d = xv.data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in &idx {
            if i >= n {
                return Err(AutodiffError::Index {
                    op: "gather",
                    index: i,
                    extent: n,
                });
            }
            out.push(d[i]);
        }
        let value = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Gather { x, idx }, value, rg))
    }

    /// Divides every row of `x` by `max(‖row‖, eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = check_matrix("row_normalize", xv)?;
        let mut out = xv.data().to_vec();
        for i in 0..n {
            let row = &mut out[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let den = norm.max(eps);
            row.iter_mut().for_each(|v| *v /= den);
        }
        let value = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::RowNormalize { x, eps }, value, rg))
    }

    /// Row-wise `log Σ_j exp(x[i, j])`, computed with max subtraction.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, m) = check_matrix("logsumexp_rows", xv)?;
        if m == 0 {
            return Err(AutodiffError::Empty("logsumexp_rows"));
        }
        let out = (0..n)
            .map(|i| {
                let row = xv.row(i);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::LogSumExpRows(x), Tensor::vector(out), rg))
    }

    /// Cosine similarity of two equal-length vectors with each norm floored at `eps`.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        check_same("cosine_similarity", self.value(a), self.value(b))?;
        let d = self.value(a).numel();
        let a2 = self.reshape(a, &[1, d])?;
        let b2 = self.reshape(b, &[1, d])?;
        let an = self.row_normalize(a2, eps)?;
        let bn = self.row_normalize(b2, eps)?;
        let prod = self.mul(an, bn)?;
        Ok(self.sum(prod))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.shape()[0], av.shape()[1]);
                let r = bv.shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    let da = da.data_mut();
                    for ii in 0..p {
                        let grow = &gd[ii * r..(ii + 1) * r];
                        for k in 0..q {
                            let brow = &bv.data()[k * r..(k + 1) * r];
                            da[ii * q + k] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let db = db.data_mut();
                    for ii in 0..p {
                        let grow = &gd[ii * r..(ii + 1) * r];
                        for k in 0..q {
                            let aik = av.data()[ii * q + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for (o, &gv) in db[k * r..(k + 1) * r].iter_mut().zip(grow) {
                                *o += aik * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (g.shape()[0], g.shape()[1]);
                if let Some(dx) = self.slot(grads, *x) {
                    let dx = dx.data_mut();
                    for j in 0..m {
                        for ii in 0..n {
                            dx[ii * m + j] += gd[j * n + ii];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        d.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.add_assign(g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (o, &gv) in d.data_mut().iter_mut().zip(gd) {
                        *o -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(bv) {
                        *o += gv * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((o, &gv), &x) in d.data_mut().iter_mut().zip(gd).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    for (o, &gv) in d.data_mut().iter_mut().zip(gd) {
                        *o += gv * c;
                    }
                }
            }
            Op::AddScalar(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.add_assign(g);
                }
            }
            Op::ScaleBy { x, s, idx } => {
                let c = self.value(*s).data()[*idx];
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for (o, &gv) in d.data_mut().iter_mut().zip(gd) {
                        *o += gv * c;
                    }
                }
                if let Some(d) = self.slot(grads, *s) {
                    d.data_mut()[*idx] += gd.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::AddRow(a, r) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.add_assign(g);
                }
                if let Some(d) = self.slot(grads, *r) {
                    let dd = d.data_mut();
                    let w = dd.len();
                    for row in gd.chunks(w) {
                        for (o, &gv) in dd.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                let w = av.shape()[1];
                if let Some(d) = self.slot(grads, *a) {
                    let dd = d.data_mut();
                    for (ii, &ci) in cv.data().iter().enumerate() {
                        for j in ii * w..(ii + 1) * w {
                            dd[j] += gd[j] * ci;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *c) {
                    let dd = d.data_mut();
                    for (ii, o) in dd.iter_mut().enumerate() {
                        let rng = ii * w..(ii + 1) * w;
                        *o += gd[rng.clone()].iter().zip(&av.data()[rng]).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            Op::BroadcastRows(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    let w = dd.len();
                    for row in gd.chunks(w.max(1)) {
                        for (o, &gv) in dd.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let yv = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(yv) {
                        if y > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(yv) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Exp(x) => {
                let yv = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &y) in d.data_mut().iter_mut().zip(gd).zip(yv) {
                        *o += gv * y;
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &xx) in d.data_mut().iter_mut().zip(gd).zip(xv) {
                        *o += gv / xx;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                if let Some(d) = self.slot(grads, *x) {
                    for ((o, &gv), &xx) in d.data_mut().iter_mut().zip(gd).zip(xv) {
                        if xx >= *lo && xx <= *hi {
                            *o += gv;
                        }
                    }
                }
            }
            Op::SumAll(x) | Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let scale = if matches!(node.op, Op::MeanAll(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gv = gd[0] * scale;
                if let Some(d) = self.slot(grads, *x) {
                    d.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let shape = self.value(*x).shape().to_vec();
                let (outer, n, inner) = axis_split(&shape, *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    for o in 0..outer {
                        let src = &gd[o * inner..(o + 1) * inner];
                        for a in 0..n {
                            let dst = &mut dd[(o * n + a) * inner..(o * n + a + 1) * inner];
                            for (t, &s) in dst.iter_mut().zip(src) {
                                *t += s * scale;
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let n = self.value(*v).shape()[*axis];
                    if let Some(d) = self.slot(grads, *v) {
                        let dd = d.data_mut();
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            for (t, &s) in dd[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                                *t += s;
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    for (o, &gv) in d.data_mut().iter_mut().zip(gd) {
                        *o += gv;
                    }
                }
            }
            Op::SliceWindow { x, axis, start } => {
                let shape = self.value(*x).shape().to_vec();
                let (outer, n, inner) = axis_split(&shape, *axis);
                let len = g.shape()[*axis];
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    for o in 0..outer {
                        let from = (o * n + start) * inner;
                        let src = &gd[o * len * inner..(o + 1) * len * inner];
                        for (t, &s) in dd[from..from + len * inner].iter_mut().zip(src) {
                            *t += s;
                        }
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let w = self.value(*table).shape()[1];
                if let Some(d) = self.slot(grads, *table) {
                    let dd = d.data_mut();
                    for (ii, &r) in rows.iter().enumerate() {
                        for (t, &s) in dd[r * w..(r + 1) * w].iter_mut().zip(&gd[ii * w..(ii + 1) * w]) {
                            *t += s;
                        }
                    }
                }
            }
            Op::Gather { x, idx } => {
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    for (&j, &gv) in idx.iter().zip(gd) {
                        dd[j] += gv;
                    }
                }
            }
            Op::RowNormalize { x, eps } => {
                let xv = self.value(*x);
                let yv = node.value.data();
                let w = xv.shape()[1];
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    for ii in 0..xv.shape()[0] {
                        let rng = ii * w..(ii + 1) * w;
                        let xr = &xv.data()[rng.clone()];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gr = &gd[rng.clone()];
                        let yr = &yv[rng.clone()];
                        if norm > *eps {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((o, &gv), &y) in dd[rng].iter_mut().zip(gr).zip(yr) {
                                *o += (gv - y * dot) / norm;
                            }
                        } else {
                            for (o, &gv) in dd[rng].iter_mut().zip(gr) {
                                *o += gv / eps;
                            }
                        }
                    }
                }
            }
            Op::LogSumExpRows(x) => {
                let xv = self.value(*x);
                let m = xv.shape()[1];
                let yv = node.value.data();
                if let Some(d) = self.slot(grads, *x) {
                    let dd = d.data_mut();
                    for (ii, (&gv, &lse)) in gd.iter().zip(yv).enumerate() {
                        for j in ii * m..(ii + 1) * m {
                            dd[j] += gv * (xv.data()[j] - lse).exp();
                        }
                    }
                }
            }
        }
    }

    /// Zero-initialised gradient accumulator for `v`, or `None` if `v` is
    /// not differentiable.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }
}
