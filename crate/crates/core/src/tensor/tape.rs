//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation applied
//! during a forward pass. Nodes are appended in evaluation order, so
//! walking the node list backwards is a valid reverse topological order.
//! [`Tape::backward`] returns the gradient of the sum of a node's entries
//! with respect to every parameter that contributed to it.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;

use super::matrix::{sigmoid, Matrix};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Lower/upper clamp applied to predictions entering the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

static BCE_CLAMP_LOGGED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// `a + 1·b` where `b` is a single row.
    AddRow(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    /// `a[i][j] * c[i]` where `c` is a single column.
    ScaleRows(NodeId, NodeId),
    Sigmoid(NodeId),
    GatherRows(NodeId, Vec<usize>),
    /// Row `(b, k)` of the output is `p[b] ∘ q[k]`.
    PairProduct(NodeId, NodeId),
    RowSum(NodeId),
    Reshape(NodeId),
    /// Pre-scaled keep mask.
    Dropout(NodeId, Matrix),
    /// Summed binary cross-entropy against fixed targets; the stored
    /// predictions are the clamped ones.
    Bce(NodeId, Vec<f64>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
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

    pub fn value(&self, node: NodeId) -> &Matrix {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, node: NodeId) -> (usize, usize) {
        self.nodes[node.0].value.shape()
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Node holding the current value of a parameter. Repeated calls reuse
    /// the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let value = self.params.value(id).clone();
        let n = self.push(value, Op::Param(id));
        self.param_nodes[id.index()] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the layout used for `x · Wᵀ` with `W` stored output-major.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    /// Adds the single-row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != ac {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: (ar, ac),
                rhs: (rr, rc),
            });
        }
        let mut v = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for r in 0..ar {
            for (x, b) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn scale_rows(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (cr, cc) = self.shape(col);
        if cc != 1 || cr != ar {
            return Err(Error::Dimension {
                op: "scale_rows",
                lhs: (ar, ac),
                rhs: (cr, cc),
            });
        }
        let mut v = self.value(a).clone();
        for r in 0..ar {
            let s = self.value(col).data()[r];
            for x in v.row_mut(r) {
                *x *= s;
            }
        }
        Ok(self.push(v, Op::ScaleRows(a, col)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row selection; the batched equivalent of multiplying one-hot rows
    /// into `a`.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let src = self.value(a);
        let mut v = Matrix::zeros(indices.len(), src.cols());
        for (i, &idx) in indices.iter().enumerate() {
            if idx >= src.rows() {
                return Err(Error::IndexOutOfRange {
                    kind: "row",
                    index: idx,
                    len: src.rows(),
                });
            }
            v.row_mut(i).copy_from_slice(src.row(idx));
        }
        Ok(self.push(v, Op::GatherRows(a, indices.to_vec())))
    }

    /// For `p: B×d` and `q: K×d`, returns the `(B·K)×d` matrix whose row
    /// `b·K + k` is `p[b] ∘ q[k]`.
    pub fn pair_product(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (pb, pd) = self.shape(p);
        let (qk, qd) = self.shape(q);
        if pd != qd {
            return Err(Error::Dimension {
                op: "pair_product",
                lhs: (pb, pd),
                rhs: (qk, qd),
            });
        }
        let mut v = Matrix::zeros(pb * qk, pd);
        {
            let pv = self.value(p);
            let qv = self.value(q);
            for b in 0..pb {
                for k in 0..qk {
                    let out = v.row_mut(b * qk + k);
                    for ((o, x), y) in out.iter_mut().zip(pv.row(b)).zip(qv.row(k)) {
                        *o = x * y;
                    }
                }
            }
        }
        Ok(self.push(v, Op::PairProduct(p, q)))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let sums: Vec<f64> = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        self.push(Matrix::column_vector(&sums), Op::RowSum(a))
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let src = self.value(a);
        if src.rows() * src.cols() != rows * cols {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: src.shape(),
                rhs: (rows, cols),
            });
        }
        let v = Matrix::from_vec(rows, cols, src.data().to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Inverted dropout. Outside training, or with `rate == 0`, returns
    /// `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<NodeId> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask_data: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Matrix::from_vec(r, c, mask_data)?;
        let v = self.value(x).hadamard(&mask)?;
        Ok(self.push(v, Op::Dropout(x, mask)))
    }

    /// Summed binary cross-entropy `−Σ r·ln y + (1−r)·ln(1−y)`. Predictions
    /// at or beyond `[ε, 1−ε]` are clamped first.
    pub fn bce(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.data().len() != targets.len() || targets.is_empty() {
            return Err(Error::Dimension {
                op: "bce",
                lhs: pv.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let mut clamped = Vec::with_capacity(targets.len());
        let mut loss = 0.0;
        for (&y, &r) in pv.data().iter().zip(targets) {
            let yc = y.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if yc != y && !BCE_CLAMP_LOGGED.swap(true, Ordering::Relaxed) {
                log::warn!("prediction {y} clamped to [{BCE_EPS}, 1-{BCE_EPS}] in cross-entropy");
            }
            loss -= r * yc.ln() + (1.0 - r) * (1.0 - yc).ln();
            clamped.push(yc);
        }
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::Bce(pred, clamped, targets.to_vec()),
        ))
    }

    /// Gradient of `sum(value(root))` with respect to every parameter that
    /// reached `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        let (rr, rc) = self.shape(root);
        grads[root.0] = Some(Matrix::filled(rr, rc, 1.0));
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate(&mut out.grads[id.index()], g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.t_matmul(self.value(*a))?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddRow(a, row) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads[row.0], db);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::ScaleRows(a, col) => {
                    let av = self.value(*a);
                    let cv = self.value(*col);
                    let mut da = g.clone();
                    let mut dc = Matrix::zeros(cv.rows(), 1);
                    for r in 0..g.rows() {
                        let s = cv.data()[r];
                        dc.data_mut()[r] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        for x in da.row_mut(r) {
                            *x *= s;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[col.0], dc);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_with(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads[a.0], da);
                }
                Op::GatherRows(a, indices) => {
                    let (sr, sc) = self.shape(*a);
                    let mut da = Matrix::zeros(sr, sc);
                    for (i, &idx) in indices.iter().enumerate() {
                        for (d, v) in da.row_mut(idx).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::PairProduct(p, q) => {
                    let pv = self.value(*p);
                    let qv = self.value(*q);
                    let (pb, d) = pv.shape();
                    let qk = qv.rows();
                    let mut dp = Matrix::zeros(pb, d);
                    let mut dq = Matrix::zeros(qk, d);
                    for b in 0..pb {
                        for k in 0..qk {
                            let gr = g.row(b * qk + k);
                            for (t, &gt) in gr.iter().enumerate() {
                                dp.data_mut()[b * d + t] += gt * qv.get(k, t);
                                dq.data_mut()[k * d + t] += gt * pv.get(b, t);
                            }
                        }
                    }
                    accumulate(&mut grads[p.0], dp);
                    accumulate(&mut grads[q.0], dq);
                }
                Op::RowSum(a) => {
                    let (sr, sc) = self.shape(*a);
                    let mut da = Matrix::zeros(sr, sc);
                    for r in 0..sr {
                        let v = g.data()[r];
                        da.row_mut(r).fill(v);
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::Reshape(a) => {
                    let (sr, sc) = self.shape(*a);
                    accumulate(&mut grads[a.0], Matrix::from_vec(sr, sc, g.into_data())?);
                }
                Op::Dropout(a, mask) => {
                    accumulate(&mut grads[a.0], g.hadamard(mask)?);
                }
                Op::Bce(pred, clamped, targets) => {
                    let scale = g.data()[0];
                    let (pr, pc) = self.shape(*pred);
                    let data = clamped
                        .iter()
                        .zip(targets)
                        .map(|(&y, &r)| scale * (y - r) / (y * (1.0 - y)))
                        .collect();
                    accumulate(&mut grads[pred.0], Matrix::from_vec(pr, pc, data)?);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
