//! Reverse-mode differentiation over the matrix operations the pipeline uses.
//!
//! A [`Tape`] records every operation of one forward evaluation. Parameter
//! values are read from a shared [`ParamStore`], so several tapes can be built
//! concurrently against one frozen store; gradients come back as a
//! [`Gradients`] value and are folded into the store afterwards.

use super::matrix::{softmax_rows, Matrix, LOG_EPS};
use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    GatherRows { param: ParamId, ids: Vec<usize> },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatMulTranspose(NodeId, NodeId),
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    NegLogPick(NodeId, usize),
    NormalizeSmoothed(NodeId, f64),
    KlToConstant(NodeId, Vec<f64>),
    MeanRowEntropy(NodeId),
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    ops: Vec<Op>,
    // Param nodes hold an empty placeholder; their value lives in the store.
    values: Vec<Matrix>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, ops: Vec::new(), values: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match &self.ops[id.0] {
            Op::Param(p) => self.params.value(*p),
            _ => &self.values[id.0],
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {op:?}")));
        }
        self.ops.push(op);
        self.values.push(value);
        Ok(NodeId(self.ops.len() - 1))
    }

    pub fn constant(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.ops.push(Op::Param(id));
        self.values.push(Matrix::zeros(0, 0));
        NodeId(self.ops.len() - 1)
    }

    /// Embedding lookup: row `ids[i]` of the parameter becomes row `i`.
    pub fn gather_rows(&mut self, param: ParamId, ids: &[usize]) -> Result<NodeId> {
        let table = self.params.value(param);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (i, &id) in ids.iter().enumerate() {
            if id >= table.rows() {
                return Err(Error::Index { index: id, len: table.rows() });
            }
            out.row_mut(i).copy_from_slice(table.row(id));
        }
        self.push(Op::GatherRows { param, ids: ids.to_vec() }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v)
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::dimension("add_row", m.shape(), r.shape()));
        }
        let mut v = m.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(r.values()) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`.
    pub fn matmul_transpose(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_transpose(self.value(b))?;
        self.push(Op::MatMulTranspose(a, b), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = softmax_rows(self.value(a))?;
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).mean_rows()?;
        self.push(Op::MeanRows(a), v)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, end)?;
        self.push(Op::SliceRows(a, start), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        self.push(Op::SliceCols(a, start), v)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&mats)?;
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats)?;
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// `−ln(a[0, index] + ε)` for a 1×c probability row.
    pub fn neg_log_pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let m = self.value(a);
        if index >= m.cols() {
            return Err(Error::Index { index, len: m.cols() });
        }
        let v = Matrix::row_vector(vec![-(m.get(0, index) + LOG_EPS).ln()]);
        self.push(Op::NegLogPick(a, index), v)
    }

    /// `(x + ε) / Σ(x + ε)` over a single row.
    pub fn normalize_smoothed(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() != 1 || m.cols() == 0 {
            return Err(Error::dimension("normalize_smoothed", m.shape(), (1, m.cols())));
        }
        let total: f64 = m.values().iter().map(|x| x + eps).sum();
        let v = m.map(|x| (x + eps) / total);
        self.push(Op::NormalizeSmoothed(a, eps), v)
    }

    /// `KL(a ‖ target) = Σ aᵢ ln(aᵢ / targetᵢ)` for a strictly positive 1×k row.
    pub fn kl_to_constant(&mut self, a: NodeId, target: &[f64]) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() != 1 || m.cols() != target.len() {
            return Err(Error::dimension("kl_to_constant", m.shape(), (1, target.len())));
        }
        let kl: f64 = m.values().iter().zip(target).map(|(&p, &q)| p * (p / q).ln()).sum();
        self.push(Op::KlToConstant(a, target.to_vec()), Matrix::row_vector(vec![kl]))
    }

    /// Mean over rows of the Shannon entropy `−Σ p ln(max(p, ε))`.
    pub fn mean_row_entropy(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.value(a);
        if m.rows() == 0 {
            return Err(Error::EmptyInput("entropy of zero rows".into()));
        }
        let total: f64 = m.values().iter().map(|&p| -p * p.max(LOG_EPS).ln()).sum();
        let v = Matrix::row_vector(vec![total / m.rows() as f64]);
        self.push(Op::MeanRowEntropy(a), v)
    }

    /// Gradients of the scalar node `root` with respect to every parameter.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root.0 >= self.ops.len() {
            return Err(Error::State("backward called before any forward evaluation recorded the loss".into()));
        }
        if self.value(root).shape() != (1, 1) {
            return Err(Error::State(format!("backward root must be a scalar, got {:?}", self.value(root).shape())));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Constant => {}
                Op::Param(p) => {
                    let shape = g.shape();
                    out.add_into(*p, shape, |acc| acc.add_assign(&g).expect("param grad shape"));
                }
                Op::GatherRows { param, ids } => {
                    let shape = self.params.value(*param).shape();
                    out.add_into(*param, shape, |acc| {
                        for (i, &id) in ids.iter().enumerate() {
                            for (a, b) in acc.row_mut(id).iter_mut().zip(g.row(i)) {
                                *a += b;
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *a, &g);
                    let col_sums = g.mean_rows()?.scale(g.rows() as f64);
                    accumulate(&mut grads, *row, &col_sums);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, &g.scale(*s)),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_transpose(self.value(*b))?;
                    let gb = self.value(*a).transpose_matmul(&g)?;
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::MatMulTranspose(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.transpose_matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[idx];
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, d)| p * d).sum();
                        for ((o, p), d) in gx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *o = p * (d - inner);
                        }
                    }
                    accumulate(&mut grads, *a, &gx);
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let n = src.rows() as f64;
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for (o, d) in gx.row_mut(r).iter_mut().zip(g.values()) {
                            *o = d / n;
                        }
                    }
                    accumulate(&mut grads, *a, &gx);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, &gx);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, &gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        accumulate(&mut grads, p, &g.slice_rows(offset, offset + rows)?);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        accumulate(&mut grads, p, &g.slice_cols(offset, offset + cols)?);
                        offset += cols;
                    }
                }
                Op::NegLogPick(a, index) => {
                    let src = self.value(*a);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    gx.set(0, *index, -g.get(0, 0) / (src.get(0, *index) + LOG_EPS));
                    accumulate(&mut grads, *a, &gx);
                }
                Op::NormalizeSmoothed(a, eps) => {
                    let src = self.value(*a);
                    let y = &self.values[idx];
                    let total: f64 = src.values().iter().map(|x| x + eps).sum();
                    let inner: f64 = y.values().iter().zip(g.values()).map(|(p, d)| p * d).sum();
                    let gx = g.map(|d| (d - inner) / total);
                    accumulate(&mut grads, *a, &gx);
                }
                Op::KlToConstant(a, target) => {
                    let src = self.value(*a);
                    let d = g.get(0, 0);
                    let gx = Matrix::row_vector(
                        src.values().iter().zip(target).map(|(&p, &q)| d * ((p / q).ln() + 1.0)).collect(),
                    );
                    accumulate(&mut grads, *a, &gx);
                }
                Op::MeanRowEntropy(a) => {
                    let src = self.value(*a);
                    let d = g.get(0, 0) / src.rows() as f64;
                    let gx = src.map(|p| if p > LOG_EPS { -d * (p.ln() + 1.0) } else { -d * LOG_EPS.ln() });
                    accumulate(&mut grads, *a, &gx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], node: NodeId, g: &Matrix) {
    match &mut grads[node.0] {
        Some(acc) => acc.add_assign(g).expect("gradient shape follows forward shape"),
        slot @ None => *slot = Some(g.clone()),
    }
}
