//! Define-by-run computation tape with reverse-mode accumulation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction. `backward` walks it once in reverse.

use std::collections::BTreeMap;

use super::ops;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identifier of a trainable parameter. Registering the same id twice on
/// one tape makes both uses accumulate into a single gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Hadamard(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Mask(Var, Tensor),
    SoftmaxRows(Var),
    // saved softmax of the logits
    CrossEntropy(Var, Vec<usize>, Tensor),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by parameter id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(&id, t)| (id, t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Dense list aligned with parameter ids `0..shapes.len()`; ids absent
    /// from the map become zeros of the given shape.
    pub fn into_dense(mut self, shapes: &[(usize, usize)]) -> Vec<Tensor> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| self.grads.remove(&ParamId(i)).unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transposed();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let mut out = ta.clone();
        out.axpy(1.0, tb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// `x + bias` with a `1×n` bias broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let b = tb.data();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("hadamard", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Hadamard(a, b), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_matrix(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let w = t.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let c = t.cols();
        let out = Tensor::from_matrix(end - start, c, t.data()[start * c..end * c].to_vec())?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::from_matrix(t.rows(), end - start, data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        let ng = self.needs(a);
        self.push(out, Op::Mean(a), ng)
    }

    /// Elementwise product with a constant mask (dropout with a frozen mask).
    pub fn mask_apply(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != mask.shape() {
            return Err(mismatch("mask_apply", t, &mask));
        }
        let data = t.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Mask(a, mask), ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    /// Mean cross-entropy of `softmax(logits)` against `targets`, as a `1×1`.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let nll = ops::row_nll(t, targets)?;
        let loss = nll.iter().sum::<f64>() / nll.len() as f64;
        let probs = ops::softmax_rows(t)?;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, targets.to_vec(), probs),
            ng,
        ))
    }

    /// Selects rows of `src` by index (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(src);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::TargetOutOfRange {
                row: ids.iter().position(|&i| i == bad).unwrap_or(0),
                target: bad,
                classes: t.rows(),
            });
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_matrix(ids.len(), c, data)?;
        let ng = self.needs(src);
        Ok(self.push(out, Op::GatherRows(src, ids.to_vec()), ng))
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Every parameter registered on the tape gets an entry, zero when the
    /// root does not depend on it.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::scalar(1.0));

        let mut out = Gradients::default();
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let g = match (&node.op, grads[idx].take()) {
                (Op::Param(id), g) => {
                    let g = g.unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                    match out.grads.get_mut(id) {
                        Some(acc) => acc.axpy(1.0, &g),
                        None => {
                            out.grads.insert(*id, g);
                        }
                    }
                    continue;
                }
                (_, Some(g)) if node.needs_grad => g,
                _ => continue,
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.needs(v) {
            return None;
        }
        let t = &self.nodes[v.0].value;
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols())))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    // ga += g b^T
                    gemm(m, n, k, 1.0, g.data(), false, tb.data(), true, 1.0, ga.data_mut());
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    // gb += a^T g
                    gemm(k, m, n, 1.0, ta.data(), true, g.data(), false, 1.0, gb.data_mut());
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.axpy(1.0, &g.transposed());
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    gb.axpy(1.0, g);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    gx.axpy(1.0, g);
                }
                if let Some(gb) = self.grad_buf(grads, *bias) {
                    let acc = gb.data_mut();
                    for r in 0..g.rows() {
                        for (a, &v) in acc.iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((o, &gv), &bv) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((o, &gv), &av) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *o += gv * av;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((o, &gv), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for &p in parts {
                    let rows = self.value(p).rows();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        let src = &g.data()[offset * c..(offset + rows) * c];
                        for (o, &v) in gp.data_mut().iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for r in 0..g.rows() {
                            for (o, &v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let c = g.cols();
                    let dst = &mut ga.data_mut()[start * c..(start + g.rows()) * c];
                    for (o, &v) in dst.iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let w = g.cols();
                    for r in 0..g.rows() {
                        for (o, &v) in ga.row_mut(r)[*start..start + w].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.axpy(*c, g);
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let gv = g.item() / n;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::Mask(a, mask) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((o, &gv), &m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        *o += gv * m;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let y = &node.value;
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy(logits, targets, probs) => {
                if let Some(gl) = self.grad_buf(grads, *logits) {
                    let scale = g.item() / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        let row = gl.row_mut(r);
                        for (o, &p) in row.iter_mut().zip(probs.row(r)) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
            Op::GatherRows(src, ids) => {
                if let Some(gs) = self.grad_buf(grads, *src) {
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &v) in gs.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
