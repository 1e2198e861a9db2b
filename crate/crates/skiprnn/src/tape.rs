//! Wengert tape: reverse-mode differentiation over a fixed, enumerated op
//! set.
//!
//! The forward pass appends nodes (op kind, input node ids, cached value) to
//! an append-only list; node inputs always reference earlier nodes, so the
//! list is a topologically ordered DAG. The backward pass walks it once in
//! reverse, accumulating vector-Jacobian products. A parameter used several
//! times accumulates one contribution per use, which is what unrolled
//! recurrences need.
//!
//! The straight-through ops are the one deliberate deviation from calculus:
//! `round_st` and `bernoulli_st` binarize in the forward pass but pass the
//! incoming gradient through unchanged in the backward pass.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: NodeId, b: NodeId },
    /// x . w + bias, with the 1 x n bias broadcast over rows.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// x1 . w1 + x2 . w2 + bias; the fused cell pre-activation.
    DualAffine { x1: NodeId, w1: NodeId, x2: NodeId, w2: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Elementwise minimum; gradient routes to the smaller operand,
    /// ties to the first.
    Min { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Relu { x: NodeId },
    Abs { x: NodeId },
    /// Forward: round half up. Backward: identity (straight-through).
    RoundSt { x: NodeId },
    /// Forward: Bernoulli sample of the input probability.
    /// Backward: identity (straight-through).
    BernoulliSt { x: NodeId },
    /// scale * x + shift, elementwise with constants. Only the scale
    /// matters in the backward pass.
    ScaleShift { x: NodeId, scale: f64 },
    /// Mixture out = u * new + (1 - u) * old. u is either an m x 1 column
    /// broadcast across columns (the skip recurrence's state copy) or the
    /// full m x n shape (elementwise interpolation, e.g. the GRU update
    /// gate).
    GateMix { u: NodeId, new: NodeId, old: NodeId },
    /// Tile a 1 x n row vector to m x n.
    BroadcastRows { x: NodeId, rows: usize },
    /// Tile an m x 1 column vector to m x n.
    BroadcastCols { x: NodeId, cols: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// Sum of all entries, yielding a scalar.
    SumAll { x: NodeId },
    /// Mean negative log-likelihood under a stabilized log-softmax.
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape {
    nodes: Vec<Node>,
    /// ParamId -> leaf node, so gradients can be collected per parameter.
    param_leaves: Vec<(ParamId, NodeId)>,
    n_params: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_leaves: Vec::new(),
            n_params: 0,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn push_checked(&mut self, op: Op, value: Tensor, what: &str) -> Result<NodeId> {
        value
            .check_finite(&format!("{what} (node {})", self.nodes.len()))
            .map_err(|e| e)?;
        Ok(self.push(op, value))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[n.0].value
    }

    /// Register an input (non-trainable) leaf.
    pub fn input(&mut self, t: Tensor) -> Result<NodeId> {
        self.push_checked(Op::Leaf { param: None }, t, "input leaf")
    }

    /// Register a constant leaf without finite validation (internal use for
    /// exact 0/1 masks).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { param: None }, t)
    }

    /// Register a trainable parameter as a leaf, snapshotting its value.
    pub fn param(&mut self, id: ParamId, store: &ParamStore) -> Result<NodeId> {
        let node = self.push_checked(
            Op::Leaf { param: Some(id) },
            store.get(id).clone(),
            "parameter leaf",
        )?;
        self.param_leaves.push((id, node));
        self.n_params = self.n_params.max(id.0 + 1);
        Ok(node)
    }

    // ── op builders ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.value(a).shape();
        let (kb, n) = self.value(b).shape();
        if ka != kb {
            return Err(Error::Config(format!(
                "matmul inner dimensions disagree: {m}x{ka} . {kb}x{n}"
            )));
        }
        let mut out = Tensor::zeros(m, n);
        tensor::matmul(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            ka,
            n,
        );
        self.push_checked(Op::Matmul { a, b }, out, "matmul")
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(x).shape();
        let (kw, n) = self.value(w).shape();
        let (br, bn) = self.value(b).shape();
        if k != kw || br != 1 || bn != n {
            return Err(Error::Config(format!(
                "affine shapes disagree: x {m}x{k}, w {kw}x{n}, b {br}x{bn}"
            )));
        }
        let mut out = Tensor::zeros(m, n);
        tensor::affine_raw(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        self.push_checked(Op::Affine { x, w, b }, out, "affine")
    }

    pub fn dual_affine(
        &mut self,
        x1: NodeId,
        w1: NodeId,
        x2: NodeId,
        w2: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let (m1, k1) = self.value(x1).shape();
        let (kw1, n1) = self.value(w1).shape();
        let (m2, k2) = self.value(x2).shape();
        let (kw2, n2) = self.value(w2).shape();
        let (br, bn) = self.value(b).shape();
        if k1 != kw1 || k2 != kw2 || m1 != m2 || n1 != n2 || br != 1 || bn != n1 {
            return Err(Error::Config(format!(
                "dual_affine shapes disagree: x1 {m1}x{k1}, w1 {kw1}x{n1}, \
                 x2 {m2}x{k2}, w2 {kw2}x{n2}, b {br}x{bn}"
            )));
        }
        let (m, n) = (m1, n1);
        let mut out = Tensor::zeros(m, n);
        tensor::dual_affine_raw(
            self.value(x1).data(),
            self.value(w1).data(),
            self.value(x2).data(),
            self.value(w2).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k1,
            k2,
            n,
        );
        self.push_checked(Op::DualAffine { x1, w1, x2, w2, b }, out, "dual_affine")
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        // Equal shapes, or a 1x1 scalar on either side.
        let out = if (ar, ac) == (br, bc) {
            let bd = self.value(b).data();
            Tensor::from_vec(
                ar,
                ac,
                self.value(a)
                    .data()
                    .iter()
                    .zip(bd)
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            )
        } else if (br, bc) == (1, 1) {
            let y = self.value(b).item();
            self.value(a).map(|x| f(x, y))
        } else if (ar, ac) == (1, 1) {
            let x = self.value(a).item();
            self.value(b).map(|y| f(x, y))
        } else {
            return Err(Error::Config(format!(
                "{what} operand shapes disagree: {ar}x{ac} vs {br}x{bc}"
            )));
        };
        self.push_checked(op, out, what)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(Error::Config(format!(
                "min operand shapes disagree: {ar}x{ac} vs {br}x{bc}"
            )));
        }
        self.binary_elementwise(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min { a, b })
    }

    fn unary(
        &mut self,
        x: NodeId,
        what: &str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let out = self.value(x).map(f);
        self.push_checked(op, out, what)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "sigmoid", tensor::sigmoid, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh { x })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "relu", |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "abs", f64::abs, Op::Abs { x })
    }

    pub fn round_st(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, "round_st", tensor::round_half_up, Op::RoundSt { x })
    }

    /// Sample u ~ Bernoulli(p) elementwise. Entries must lie in [0, 1].
    pub fn bernoulli_st(&mut self, x: NodeId, rng: &mut Rng) -> Result<NodeId> {
        let p = self.value(x);
        for (i, &v) in p.data().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Numeric(format!(
                    "bernoulli_st probability {v} at index {i} outside [0, 1]"
                )));
            }
        }
        let (r, c) = p.shape();
        let data: Vec<f64> = p
            .data()
            .iter()
            .map(|&v| if rng.bernoulli(v) { 1.0 } else { 0.0 })
            .collect();
        let out = Tensor::from_vec(r, c, data);
        self.push_checked(Op::BernoulliSt { x }, out, "bernoulli_st")
    }

    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.unary(
            x,
            "scale_shift",
            |v| scale * v + shift,
            Op::ScaleShift { x, scale },
        )
    }

    /// 1 - x, the complement used all over the gate arithmetic.
    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.scale_shift(x, -1.0, 1.0)
    }

    /// out = u * new + (1 - u) * old, with u either [m x 1] or [m x n].
    pub fn gate_mix(&mut self, u: NodeId, new: NodeId, old: NodeId) -> Result<NodeId> {
        let (um, uc) = self.value(u).shape();
        let (m, n) = self.value(new).shape();
        let (om, oc) = self.value(old).shape();
        if (om, oc) != (m, n) || um != m || (uc != 1 && uc != n) {
            return Err(Error::Config(format!(
                "gate_mix shapes disagree: u {um}x{uc}, new {m}x{n}, old {om}x{oc}"
            )));
        }
        let ud = self.value(u).data();
        let nd = self.value(new).data();
        let od = self.value(old).data();
        let mut data = Vec::with_capacity(m * n);
        if uc == 1 {
            for ((&ui, nrow), orow) in ud.iter().zip(nd.chunks(n)).zip(od.chunks(n)) {
                for (&nv, &ov) in nrow.iter().zip(orow) {
                    data.push(ui * nv + (1.0 - ui) * ov);
                }
            }
        } else {
            for ((&ui, &nv), &ov) in ud.iter().zip(nd).zip(od) {
                data.push(ui * nv + (1.0 - ui) * ov);
            }
        }
        let out = Tensor::from_vec(m, n, data);
        self.push_checked(Op::GateMix { u, new, old }, out, "gate_mix")
    }

    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let (r, n) = self.value(x).shape();
        if r != 1 {
            return Err(Error::Config(format!(
                "broadcast_rows expects a 1xN row vector, got {r}x{n}"
            )));
        }
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(self.value(x).data());
        }
        let out = Tensor::from_vec(rows, n, data);
        self.push_checked(Op::BroadcastRows { x, rows }, out, "broadcast_rows")
    }

    pub fn broadcast_cols(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        let (m, c) = self.value(x).shape();
        if c != 1 {
            return Err(Error::Config(format!(
                "broadcast_cols expects an Mx1 column vector, got {m}x{c}"
            )));
        }
        let mut data = Vec::with_capacity(m * cols);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat(v).take(cols));
        }
        let out = Tensor::from_vec(m, cols, data);
        self.push_checked(Op::BroadcastCols { x, cols }, out, "broadcast_cols")
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        if start + len > n || len == 0 {
            return Err(Error::Config(format!(
                "slice_cols [{start}, {start}+{len}) out of range for width {n}"
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for row in self.value(x).data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_vec(m, len, data);
        self.push_checked(Op::SliceCols { x, start, len }, out, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Config("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let (pm, pc) = self.value(p).shape();
            if pm != m {
                return Err(Error::Config(format!(
                    "concat_cols row counts disagree: {m} vs {pm}"
                )));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let out = Tensor::from_vec(m, total, data);
        self.push_checked(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            out,
            "concat_cols",
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push_checked(Op::SumAll { x }, Tensor::scalar(s), "sum_all")
    }

    /// Mean of all entries.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x)?;
        self.scale_shift(s, 1.0 / n, 0.0)
    }

    /// Batch-mean cross-entropy of logits [B x C] against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (b, c) = self.value(logits).shape();
        if targets.len() != b {
            return Err(Error::Config(format!(
                "cross_entropy: {b} logit rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Config(format!(
                "cross_entropy: target class {bad} out of range for {c} classes"
            )));
        }
        let mut total = 0.0;
        for (row, &t) in self.value(logits).data().chunks(c).zip(targets) {
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = maxv + row.iter().map(|&x| (x - maxv).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let loss = Tensor::scalar(total / b as f64);
        self.push_checked(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            loss,
            "cross_entropy",
        )
    }

    // ── backward ─────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss node. Visits every node at most
    /// once in reverse topological order; intermediate gradient buffers are
    /// released as soon as their node has propagated.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Config(format!(
                "backward requires a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    // Keep leaf gradients for collection below.
                    if param.is_some() {
                        grads[i] = Some(g);
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = self.nodes[a.0].value.shape();
                    let n = self.nodes[b.0].value.cols();
                    let mut da = vec![0.0; m * k];
                    tensor::matmul_nt(&g, self.nodes[b.0].value.data(), &mut da, m, n, k);
                    accumulate(&mut grads[a.0], &da);
                    let mut db = vec![0.0; k * n];
                    tensor::matmul_tn(self.nodes[a.0].value.data(), &g, &mut db, k, m, n);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Affine { x, w, b } => {
                    self.backward_affine(&mut grads, &g, *x, *w, Some(*b));
                }
                Op::DualAffine { x1, w1, x2, w2, b } => {
                    self.backward_affine(&mut grads, &g, *x1, *w1, Some(*b));
                    self.backward_affine(&mut grads, &g, *x2, *w2, None);
                }
                Op::Add { a, b } => {
                    self.accumulate_elementwise(&mut grads, *a, &g, |_| 1.0, None);
                    self.accumulate_elementwise(&mut grads, *b, &g, |_| 1.0, None);
                }
                Op::Sub { a, b } => {
                    self.accumulate_elementwise(&mut grads, *a, &g, |_| 1.0, None);
                    self.accumulate_elementwise(&mut grads, *b, &g, |_| -1.0, None);
                }
                Op::Mul { a, b } => {
                    let bd = self.nodes[b.0].value.data();
                    self.accumulate_mul(&mut grads, *a, &g, bd);
                    let ad = self.nodes[a.0].value.data();
                    self.accumulate_mul(&mut grads, *b, &g, ad);
                }
                Op::Min { a, b } => {
                    let ad = self.nodes[a.0].value.data();
                    let bd = self.nodes[b.0].value.data();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(&gv, (&x, &y))| if x <= y { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], &da);
                    let db: Vec<f64> = g
                        .iter()
                        .zip(ad.iter().zip(bd))
                        .map(|(&gv, (&x, &y))| if y < x { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Sigmoid { x } => {
                    let y = self.nodes[i].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Tanh { x } => {
                    let y = self.nodes[i].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Relu { x } => {
                    let xv = self.nodes[x.0].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Abs { x } => {
                    let xv = self.nodes[x.0].value.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &v)| {
                            if v > 0.0 {
                                gv
                            } else if v < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                // Straight-through: the binarization backward is exactly 1.
                Op::RoundSt { x } | Op::BernoulliSt { x } => {
                    accumulate(&mut grads[x.0], &g);
                }
                Op::ScaleShift { x, scale } => {
                    let dx: Vec<f64> = g.iter().map(|&gv| gv * scale).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::GateMix { u, new, old } => {
                    let (m, n) = self.nodes[new.0].value.shape();
                    let uc = self.nodes[u.0].value.cols();
                    let ud = self.nodes[u.0].value.data();
                    let nd = self.nodes[new.0].value.data();
                    let od = self.nodes[old.0].value.data();
                    let mut dnew = vec![0.0; m * n];
                    let mut dold = vec![0.0; m * n];
                    if uc == 1 {
                        let mut du = vec![0.0; m];
                        for r in 0..m {
                            let ui = ud[r];
                            let mut s = 0.0;
                            for j in 0..n {
                                let idx = r * n + j;
                                dnew[idx] = g[idx] * ui;
                                dold[idx] = g[idx] * (1.0 - ui);
                                s += g[idx] * (nd[idx] - od[idx]);
                            }
                            du[r] = s;
                        }
                        accumulate(&mut grads[u.0], &du);
                    } else {
                        let mut du = vec![0.0; m * n];
                        for idx in 0..m * n {
                            dnew[idx] = g[idx] * ud[idx];
                            dold[idx] = g[idx] * (1.0 - ud[idx]);
                            du[idx] = g[idx] * (nd[idx] - od[idx]);
                        }
                        accumulate(&mut grads[u.0], &du);
                    }
                    accumulate(&mut grads[new.0], &dnew);
                    accumulate(&mut grads[old.0], &dold);
                }
                Op::BroadcastRows { x, rows } => {
                    let n = self.nodes[x.0].value.cols();
                    let mut dx = vec![0.0; n];
                    for r in 0..*rows {
                        for (d, &gv) in dx.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::BroadcastCols { x, cols } => {
                    let m = self.nodes[x.0].value.rows();
                    let mut dx = vec![0.0; m];
                    for (r, d) in dx.iter_mut().enumerate() {
                        for &gv in &g[r * cols..(r + 1) * cols] {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::SliceCols { x, start, len } => {
                    let (m, n) = self.nodes[x.0].value.shape();
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::ConcatCols { parts } => {
                    let m = self.nodes[i].value.rows();
                    let total = self.nodes[i].value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0; m * pc];
                        for r in 0..m {
                            dp[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + pc]);
                        }
                        accumulate(&mut grads[p.0], &dp);
                        offset += pc;
                    }
                }
                Op::SumAll { x } => {
                    let gv = g[0];
                    let n = self.nodes[x.0].value.len();
                    accumulate_scaled_ones(&mut grads[x.0], gv, n);
                }
                Op::CrossEntropy { logits, targets } => {
                    let (b, c) = self.nodes[logits.0].value.shape();
                    let gv = g[0] / b as f64;
                    let mut dl = vec![0.0; b * c];
                    for (r, (row, &t)) in self.nodes[logits.0]
                        .value
                        .data()
                        .chunks(c)
                        .zip(targets)
                        .enumerate()
                    {
                        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&x| (x - maxv).exp()).sum();
                        for (j, &x) in row.iter().enumerate() {
                            let p = (x - maxv).exp() / denom;
                            dl[r * c + j] = gv * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut grads[logits.0], &dl);
                }
            }
        }

        let mut out = Gradients::empty(self.n_params);
        for &(pid, node) in &self.param_leaves {
            if let Some(g) = &grads[node.0] {
                let (r, c) = self.nodes[node.0].value.shape();
                let tensor = Tensor::from_vec(r, c, g.clone());
                match out.get_mut(pid) {
                    // A parameter registered as several leaves sums over uses.
                    Some(existing) => {
                        for (e, &v) in existing.data_mut().iter_mut().zip(g) {
                            *e += v;
                        }
                    }
                    None => out.set(pid, tensor),
                }
            }
        }
        Ok(out)
    }

    fn backward_affine(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) {
        let (m, k) = self.nodes[x.0].value.shape();
        let n = self.nodes[w.0].value.cols();
        let mut dx = vec![0.0; m * k];
        tensor::matmul_nt(g, self.nodes[w.0].value.data(), &mut dx, m, n, k);
        accumulate(&mut grads[x.0], &dx);
        let mut dw = vec![0.0; k * n];
        tensor::matmul_tn(self.nodes[x.0].value.data(), g, &mut dw, k, m, n);
        accumulate(&mut grads[w.0], &dw);
        if let Some(b) = b {
            let mut db = vec![0.0; n];
            for row in g.chunks(n) {
                for (d, &gv) in db.iter_mut().zip(row) {
                    *d += gv;
                }
            }
            accumulate(&mut grads[b.0], &db);
        }
    }

    /// Accumulate g * factor(i) into the grad buffer of `target`, handling
    /// the scalar-broadcast case where `target` is 1x1.
    fn accumulate_elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        g: &[f64],
        factor: impl Fn(usize) -> f64,
        _marker: Option<()>,
    ) {
        if self.nodes[target.0].value.is_scalar() && g.len() > 1 {
            let total: f64 = g.iter().enumerate().map(|(i, &gv)| gv * factor(i)).sum();
            accumulate(&mut grads[target.0], &[total]);
        } else {
            let dx: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * factor(i)).collect();
            accumulate(&mut grads[target.0], &dx);
        }
    }

    fn accumulate_mul(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        g: &[f64],
        other: &[f64],
    ) {
        if self.nodes[target.0].value.is_scalar() && g.len() > 1 {
            let total: f64 = g.iter().zip(other).map(|(&gv, &ov)| gv * ov).sum();
            accumulate(&mut grads[target.0], &[total]);
        } else if other.len() == 1 && g.len() > 1 {
            let ov = other[0];
            let dx: Vec<f64> = g.iter().map(|&gv| gv * ov).collect();
            accumulate(&mut grads[target.0], &dx);
        } else {
            let dx: Vec<f64> = g.iter().zip(other).map(|(&gv, &ov)| gv * ov).collect();
            accumulate(&mut grads[target.0], &dx);
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(existing) => {
            debug_assert_eq!(existing.len(), g.len());
            for (e, &v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_scaled_ones(slot: &mut Option<Vec<f64>>, gv: f64, n: usize) {
    match slot {
        Some(existing) => {
            for e in existing.iter_mut() {
                *e += gv;
            }
        }
        None => *slot = Some(vec![gv; n]),
    }
}
