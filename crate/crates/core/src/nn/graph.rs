//! Reverse-mode differentiation over the small set of matrix operations the two
//! model variants are built from.
//!
//! A [`Graph`] records every operation applied during a forward pass together
//! with its output value. [`Graph::backward`] walks the tape in reverse and
//! returns gradients for every parameter of the bound [`ParamStore`] that took
//! part in the computation.

use std::collections::HashMap;

use rand::Rng;

use super::{AttentionMask, Gradients, Matrix, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Additive logit offset for disallowed attention edges.
pub const MASK_LOGIT: f64 = -1e30;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Const,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix<T>,
        rstd: Vec<T>,
    },
    Softmax(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Dropout(NodeId, Matrix<T>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        count: usize,
    },
    WeightedSum(Vec<(NodeId, T)>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<usize, NodeId>,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Const, false)
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let pid = self.store.id(name)?;
        if let Some(&id) = self.param_nodes.get(&pid) {
            return Ok(id);
        }
        let value = self.store.param(pid).value.clone();
        let id = self.push(value, Op::Param(pid), true);
        self.param_nodes.insert(pid, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// Broadcasts a `1 x cols` node over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(row))?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(v, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// GELU, tanh approximation (smooth, so finite differences stay meaningful).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalisation with learned `1 x cols` scale and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            return Err(Error::shape("layer norm scale/shift must be 1 x cols"));
        }
        let n = T::lit(cols as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.set(r, c, h);
                out.set(r, c, h * g.get(0, c) + b.get(0, c));
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Row-wise softmax under an attention mask.
    pub fn masked_softmax(&mut self, x: NodeId, mask: &AttentionMask) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape() != (mask.query_len(), mask.key_len()) {
            return Err(Error::shape(format!(
                "logits {}x{} vs mask {}x{}",
                xv.rows(),
                xv.cols(),
                mask.query_len(),
                mask.key_len()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let p = masked_softmax(xv.row(r), mask.row(r))?;
            out.row_mut(r).copy_from_slice(&p);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_rows(&mats)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_rows(start, len)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, len)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::SliceCols(a, start), ng))
    }

    /// Inverted dropout. A rate of zero returns `a` unchanged.
    pub fn dropout<R: Rng>(&mut self, a: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return a;
        }
        let (rows, cols) = self.value(a).shape();
        let keep = T::lit(1.0 / (1.0 - rate));
        let data = (0..rows * cols)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = Matrix::from_vec(rows, cols, data).expect("mask shape");
        let v = Matrix::from_vec(
            rows,
            cols,
            self.value(a)
                .as_slice()
                .iter()
                .zip(mask.as_slice())
                .map(|(&x, &m)| x * m)
                .collect(),
        )
        .expect("dropout shape");
        let ng = self.ng(a);
        self.push(v, Op::Dropout(a, mask), ng)
    }

    /// Mean softmax cross-entropy over rows with a target; rows with `None`
    /// are ignored. Returns a `1 x 1` node, or `None` when no row is valid.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
    ) -> Result<Option<NodeId>> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(Error::shape(format!(
                "{} logit rows for {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Ok(None);
        }
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= lv.cols() {
                    return Err(Error::shape(format!("target class {t} out of range")));
                }
                total += cross_entropy_row(lv.row(r), t).0;
            }
        }
        let v = Matrix::filled(1, 1, total / T::lit(count as f64));
        let ng = self.ng(logits);
        Ok(Some(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                count,
            },
            ng,
        )))
    }

    /// `Σ wᵢ·xᵢ` over `1 x 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let mut total = T::zero();
        for &(id, w) in terms {
            if self.value(id).shape() != (1, 1) {
                return Err(Error::shape("weighted_sum expects scalar nodes"));
            }
            total += w * self.value(id).get(0, 0);
        }
        let ng = terms.iter().any(|&(id, _)| self.ng(id));
        Ok(self.push(Matrix::filled(1, 1, total), Op::WeightedSum(terms.to_vec()), ng))
    }

    /// Gradients of a scalar node with respect to every bound parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape("backward needs a 1 x 1 loss"));
        }
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        let mut out: Vec<Option<Matrix<T>>> = vec![None; self.store.len()];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param(pid) => accumulate(&mut out[*pid], g)?,
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul_bt(self.value(*b))?;
                        accumulate(&mut grads[a.0], ga)?;
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).matmul_at(&g)?;
                        accumulate(&mut grads[b.0], gb)?;
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul(self.value(*b))?;
                        accumulate(&mut grads[a.0], ga)?;
                    }
                    if self.ng(*b) {
                        let gb = g.matmul_at(self.value(*a))?;
                        accumulate(&mut grads[b.0], gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads[b.0], g.clone())?;
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], g)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let mut gr = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (acc, &v) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads[row.0], gr)?;
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads[a.0], g)?;
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s))?,
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(x.as_slice())
                            .map(|(&gv, &xv)| gv * gelu_grad(xv))
                            .collect(),
                    )?;
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gamma);
                    let (rows, cols) = g.shape();
                    if self.ng(*gamma) || self.ng(*beta) {
                        let mut gg = Matrix::zeros(1, cols);
                        let mut gb = Matrix::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                let gi = g.get(r, c);
                                gg.as_mut_slice()[c] += gi * xhat.get(r, c);
                                gb.as_mut_slice()[c] += gi;
                            }
                        }
                        if self.ng(*gamma) {
                            accumulate(&mut grads[gamma.0], gg)?;
                        }
                        if self.ng(*beta) {
                            accumulate(&mut grads[beta.0], gb)?;
                        }
                    }
                    if self.ng(*x) {
                        let n = T::lit(cols as f64);
                        let mut gx = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            let mut mean_g = T::zero();
                            let mut mean_gx = T::zero();
                            for c in 0..cols {
                                let gh = g.get(r, c) * gv.get(0, c);
                                mean_g += gh;
                                mean_gx += gh * xhat.get(r, c);
                            }
                            mean_g /= n;
                            mean_gx /= n;
                            for c in 0..cols {
                                let gh = g.get(r, c) * gv.get(0, c);
                                gx.set(r, c, rstd[r] * (gh - mean_g - xhat.get(r, c) * mean_gx));
                            }
                        }
                        accumulate(&mut grads[x.0], gx)?;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&gv, &yv)| gv * yv).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).rows();
                        if self.ng(p) {
                            accumulate(&mut grads[p.0], g.slice_rows(start, len)?)?;
                        }
                        start += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).cols();
                        if self.ng(p) {
                            accumulate(&mut grads[p.0], g.slice_cols(start, len)?)?;
                        }
                        start += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let w = av.cols();
                    ga.as_mut_slice()[start * w..(start + g.rows()) * w]
                        .copy_from_slice(g.as_slice());
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::Dropout(a, mask) => {
                    let ga = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(mask.as_slice())
                            .map(|(&gv, &m)| gv * m)
                            .collect(),
                    )?;
                    accumulate(&mut grads[a.0], ga)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    count,
                } => {
                    let lv = self.value(*logits);
                    let scale = g.get(0, 0) / T::lit(*count as f64);
                    let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let (_, grad) = cross_entropy_row(lv.row(r), t);
                            for (c, gv) in grad.into_iter().enumerate() {
                                gl.set(r, c, gv * scale);
                            }
                        }
                    }
                    accumulate(&mut grads[logits.0], gl)?;
                }
                Op::WeightedSum(terms) => {
                    for &(id, w) in terms {
                        if self.ng(id) {
                            accumulate(&mut grads[id.0], g.scale(w))?;
                        }
                    }
                }
            }
        }
        Ok(Gradients::from_vec(out))
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Matrix<T>>, g: Matrix<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

/// Numerically stable softmax over the allowed positions of one row.
/// Disallowed positions receive exactly zero probability.
pub fn masked_softmax<T: Scalar>(logits: &[T], mask_row: &[bool]) -> Result<Vec<T>> {
    if logits.len() != mask_row.len() {
        return Err(Error::shape(format!(
            "{} logits with {} mask entries",
            logits.len(),
            mask_row.len()
        )));
    }
    let offset = T::lit(MASK_LOGIT);
    let shifted: Vec<T> = logits
        .iter()
        .zip(mask_row)
        .map(|(&l, &ok)| if ok { l } else { l + offset })
        .collect();
    let max = shifted
        .iter()
        .zip(mask_row)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l)
        .fold(None, |m: Option<T>, l| Some(m.map_or(l, |m| m.max(l))))
        .ok_or(Error::EmptyAttentionRow { row: 0 })?;
    let mut out: Vec<T> = shifted
        .iter()
        .zip(mask_row)
        .map(|(&l, &ok)| if ok { (l - max).exp() } else { T::zero() })
        .collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// `-log softmax(logits)[label]` and its gradient `softmax(logits) - onehot(label)`.
pub fn cross_entropy_row<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let mut arg = 0;
    for (c, &l) in logits.iter().enumerate() {
        if l > logits[arg] {
            arg = c;
        }
    }
    let max = logits[arg];
    let rest: T = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != arg)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    let log_sum = rest.ln_1p();
    let lse = max + log_sum;
    let loss = (max - logits[label]) + log_sum;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(c, &l)| {
            let p = (l - lse).exp();
            if c == label {
                p - T::one()
            } else {
                p
            }
        })
        .collect();
    (loss, grad)
}

/// Two-class cross-entropy from logits: `(loss, dloss/dlogits)`.
pub fn binary_cross_entropy_from_logits<T: Scalar>(logits: [T; 2], label: bool) -> (T, [T; 2]) {
    let (loss, g) = cross_entropy_row(&logits, usize::from(label));
    (loss, [g[0], g[1]])
}
