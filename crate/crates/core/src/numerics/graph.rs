//! Reverse-mode differentiation by operation recording.
//!
//! A [`Graph`] is a tape: every call appends a node whose inputs were
//! recorded earlier, so the node vector is already in topological order.
//! [`Graph::backward`] walks it in reverse; [`Graph::replay`] re-evaluates it
//! after leaf values change, which is what finite-difference checks use.

use super::kernels::{self, AttentionCache, AttentionDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Parameter {
        name: String,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    /// `x·w + bias` with `bias` broadcast over rows.
    Linear {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    Relu {
        a: NodeId,
    },
    SoftmaxRows {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        dims: AttentionDims,
        allowed: Option<Vec<bool>>,
    },
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    Transpose {
        a: NodeId,
    },
    ConcatRows {
        parts: Vec<NodeId>,
    },
    SumAll {
        a: NodeId,
    },
    /// Mean log-cosh between a node and a fixed target.
    LogCosh {
        pred: NodeId,
        target: Tensor,
    },
    /// Multiplication by a fixed, pre-scaled keep mask.
    Dropout {
        a: NodeId,
        mask: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
enum Saved {
    None,
    /// Per-row `(mean, 1/std)`.
    LayerNorm(Vec<(f64, f64)>),
    Attention(AttentionCache),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    saved: Saved,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    corrupt_backward: bool,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Trainable leaves in recording order, with their names.
    pub fn parameters(&self) -> Vec<(NodeId, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Parameter { name } => Some((NodeId(i), name.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Test hook: makes every backward pass report gradients scaled by 1.01.
    #[doc(hidden)]
    pub fn corrupt_gradients_for_testing(&mut self) {
        self.corrupt_backward = true;
    }

    fn push(&mut self, op: Op, value: Tensor, saved: Saved, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, saved, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, Saved::None, false)
    }

    pub fn parameter(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push(Op::Parameter { name: name.into() }, value, Saved::None, true)
    }

    /// Overwrites a leaf value. Call [`Graph::replay`] afterwards.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        match node.op {
            Op::Constant | Op::Parameter { .. } => {}
            _ => return Err(Error::contract("set_leaf on a non-leaf node")),
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("set_leaf: shape change"));
        }
        node.value = value;
        Ok(())
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let (value, saved) = self.eval(&op)?;
        let needs_grad = self.inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        Ok(self.push(op, value, saved, needs_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul { a, b })
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Op::Linear { x, w, bias })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Op::Scale { a, factor })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu { a })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SoftmaxRows { a })
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Op::LayerNorm { x, gain, bias })
    }

    /// Multi-head self-attention core; see [`kernels::attention_forward`].
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        dims: AttentionDims,
        allowed: Option<Vec<bool>>,
    ) -> Result<NodeId> {
        self.record(Op::Attention { q, k, v, dims, allowed })
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.record(Op::GatherRows { table, indices })
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose { a })
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        self.record(Op::ConcatRows { parts })
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SumAll { a })
    }

    pub fn log_cosh_loss(&mut self, pred: NodeId, target: Tensor) -> Result<NodeId> {
        self.record(Op::LogCosh { pred, target })
    }

    /// Inverted dropout with a caller-supplied keep pattern.
    pub fn dropout(&mut self, a: NodeId, keep: &[bool], rate: f64) -> Result<NodeId> {
        let scale = 1.0 / (1.0 - rate);
        let mask = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        self.record(Op::Dropout { a, mask })
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Constant | Op::Parameter { .. } => vec![],
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![*a, *b]
            }
            Op::Linear { x, w, bias } => vec![*x, *w, *bias],
            Op::LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Scale { a, .. }
            | Op::Relu { a }
            | Op::SoftmaxRows { a }
            | Op::Transpose { a }
            | Op::SumAll { a }
            | Op::Dropout { a, .. } => vec![*a],
            Op::GatherRows { table, .. } => vec![*table],
            Op::ConcatRows { parts } => parts.clone(),
            Op::LogCosh { pred, .. } => vec![*pred],
        }
    }

    fn eval(&self, op: &Op) -> Result<(Tensor, Saved)> {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        let plain = |t: Tensor| Ok((t, Saved::None));
        match op {
            Op::Constant | Op::Parameter { .. } => Err(Error::contract("leaves are not evaluated")),
            Op::MatMul { a, b } => {
                let (m, k) = val(a).require_rank2("matmul")?;
                let (k2, n) = val(b).require_rank2("matmul")?;
                if k != k2 {
                    return Err(Error::shape(format!("matmul inner extents {k} vs {k2}")));
                }
                plain(Tensor::from_parts(vec![m, n], kernels::matmul(val(a).data(), val(b).data(), m, k, n)))
            }
            Op::Linear { x, w, bias } => {
                let (m, k) = val(x).require_rank2("linear input")?;
                let (k2, n) = val(w).require_rank2("linear weight")?;
                if k != k2 || val(bias).numel() != n {
                    return Err(Error::shape(format!(
                        "linear: input width {k}, weight {k2}x{n}, bias {}",
                        val(bias).numel()
                    )));
                }
                let mut out = Vec::with_capacity(m * n);
                for _ in 0..m {
                    out.extend_from_slice(val(bias).data());
                }
                kernels::matmul_acc(val(x).data(), val(w).data(), &mut out, m, k, n);
                plain(Tensor::from_parts(vec![m, n], out))
            }
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                let (ta, tb) = (val(a), val(b));
                if ta.shape() != tb.shape() {
                    return Err(Error::shape(format!("elementwise op on {:?} and {:?}", ta.shape(), tb.shape())));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add { .. } => |x, y| x + y,
                    Op::Sub { .. } => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
                plain(Tensor::from_parts(ta.shape().to_vec(), data))
            }
            Op::Scale { a, factor } => {
                let t = val(a);
                plain(Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect()))
            }
            Op::Relu { a } => {
                let t = val(a);
                plain(Tensor::from_parts(
                    t.shape().to_vec(),
                    t.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
                ))
            }
            Op::Dropout { a, mask } => {
                let t = val(a);
                if mask.len() != t.numel() {
                    return Err(Error::shape("dropout mask length"));
                }
                plain(Tensor::from_parts(t.shape().to_vec(), t.data().iter().zip(mask).map(|(x, m)| x * m).collect()))
            }
            Op::SoftmaxRows { a } => plain(super::ops::softmax_rows(val(a))?),
            Op::LayerNorm { x, gain, bias } => {
                let (m, d) = val(x).require_rank2("layer_norm")?;
                if val(gain).numel() != d || val(bias).numel() != d {
                    return Err(Error::shape("layer_norm gain/bias width"));
                }
                let (g, b) = (val(gain).data(), val(bias).data());
                let mut out = vec![0.0; m * d];
                let mut stats = Vec::with_capacity(m);
                for (xr, or) in val(x).data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    let mean = xr.iter().sum::<f64>() / d as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + LN_EPS).sqrt();
                    for c in 0..d {
                        or[c] = (xr[c] - mean) * rstd * g[c] + b[c];
                    }
                    stats.push((mean, rstd));
                }
                Ok((Tensor::from_parts(vec![m, d], out), Saved::LayerNorm(stats)))
            }
            Op::Attention { q, k, v, dims, allowed } => {
                let (rows, wq) = val(q).require_rank2("attention q")?;
                let (rk, wk) = val(k).require_rank2("attention k")?;
                let (rv, wv) = val(v).require_rank2("attention v")?;
                if rk != rows
                    || rv != rows
                    || wq != dims.heads * dims.dk
                    || wk != wq
                    || wv != dims.heads * dims.dv
                    || dims.group == 0
                    || rows % dims.group != 0
                {
                    return Err(Error::shape(format!(
                        "attention: q {rows}x{wq}, k {rk}x{wk}, v {rv}x{wv}, dims {dims:?}"
                    )));
                }
                if let Some(mask) = allowed {
                    let t = dims.group;
                    if mask.len() != t * t || mask.chunks(t).any(|r| !r.iter().any(|&b| b)) {
                        return Err(Error::shape("attention mask must be group² with a key per row"));
                    }
                }
                let (out, cache) = kernels::attention_forward(
                    val(q).data(),
                    val(k).data(),
                    val(v).data(),
                    rows,
                    *dims,
                    allowed.as_deref(),
                );
                Ok((Tensor::from_parts(vec![rows, dims.heads * dims.dv], out), Saved::Attention(cache)))
            }
            Op::GatherRows { table, indices } => {
                let t = val(table);
                let (r, c) = t.require_rank2("gather_rows")?;
                if indices.is_empty() || indices.iter().any(|&i| i >= r) {
                    return Err(Error::shape("gather_rows: index out of range"));
                }
                let mut out = Vec::with_capacity(indices.len() * c);
                for &i in indices {
                    out.extend_from_slice(t.row(i));
                }
                plain(Tensor::from_parts(vec![indices.len(), c], out))
            }
            Op::Transpose { a } => plain(val(a).transpose()?),
            Op::ConcatRows { parts } => {
                let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
                let c = val(first).require_rank2("concat_rows")?.1;
                let mut rows = 0;
                let mut out = Vec::new();
                for p in parts {
                    let (r, c2) = val(p).require_rank2("concat_rows")?;
                    if c2 != c {
                        return Err(Error::shape("concat_rows: width mismatch"));
                    }
                    rows += r;
                    out.extend_from_slice(val(p).data());
                }
                plain(Tensor::from_parts(vec![rows, c], out))
            }
            Op::SumAll { a } => plain(Tensor::scalar(val(a).data().iter().sum())),
            Op::LogCosh { pred, target } => plain(Tensor::scalar(super::ops::log_cosh_loss(val(pred), target)?)),
        }
    }

    /// Re-evaluates every non-leaf node in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Constant | Op::Parameter { .. }) {
                continue;
            }
            let (value, saved) = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
            self.nodes[i].saved = saved;
        }
        Ok(())
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed = if self.corrupt_backward { 1.01 } else { 1.0 };
        grads[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), seed));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Parameter { .. } | Op::Constant) {
                grads[i] = Some(gout);
                continue;
            }
            for (input, g) in self.local_grads(node, &gout)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, gout: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let val = |id: &NodeId| &self.nodes[id.0].value;
        let needs = |id: &NodeId| self.nodes[id.0].needs_grad;
        let like = |id: &NodeId, data: Vec<f64>| Tensor::from_parts(val(id).shape().to_vec(), data);
        let g = gout.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Constant | Op::Parameter { .. } => {}
            Op::MatMul { a, b } => {
                let (m, k) = val(a).require_rank2("matmul")?;
                let n = val(b).cols();
                if needs(a) {
                    out.push((*a, like(a, kernels::matmul_nt(g, val(b).data(), m, n, k))));
                }
                if needs(b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn_acc(val(a).data(), g, &mut db, m, k, n);
                    out.push((*b, like(b, db)));
                }
            }
            Op::Linear { x, w, bias } => {
                let (m, k) = val(x).require_rank2("linear")?;
                let n = val(w).cols();
                if needs(x) {
                    out.push((*x, like(x, kernels::matmul_nt(g, val(w).data(), m, n, k))));
                }
                if needs(w) {
                    let mut dw = vec![0.0; k * n];
                    kernels::matmul_tn_acc(val(x).data(), g, &mut dw, m, k, n);
                    out.push((*w, like(w, dw)));
                }
                if needs(bias) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    out.push((*bias, like(bias, db)));
                }
            }
            Op::Add { a, b } => {
                out.push((*a, gout.clone()));
                out.push((*b, gout.clone()));
            }
            Op::Sub { a, b } => {
                out.push((*a, gout.clone()));
                out.push((*b, like(b, g.iter().map(|x| -x).collect())));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(a).data(), val(b).data());
                out.push((*a, like(a, g.iter().zip(vb).map(|(x, y)| x * y).collect())));
                out.push((*b, like(b, g.iter().zip(va).map(|(x, y)| x * y).collect())));
            }
            Op::Scale { a, factor } => {
                out.push((*a, like(a, g.iter().map(|x| x * factor).collect())));
            }
            Op::Relu { a } => {
                let va = val(a).data();
                out.push((*a, like(a, g.iter().zip(va).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect())));
            }
            Op::Dropout { a, mask } => {
                out.push((*a, like(a, g.iter().zip(mask).map(|(d, m)| d * m).collect())));
            }
            Op::SoftmaxRows { a } => {
                let y = &node.value;
                let c = y.cols();
                let mut da = vec![0.0; y.numel()];
                for ((yr, gr), dr) in y.data().chunks_exact(c).zip(g.chunks_exact(c)).zip(da.chunks_exact_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*a, like(a, da)));
            }
            Op::LayerNorm { x, gain, bias } => {
                let Saved::LayerNorm(stats) = &node.saved else {
                    return Err(Error::contract("layer_norm cache missing"));
                };
                let (m, d) = val(x).require_rank2("layer_norm")?;
                let xs = val(x).data();
                let gn = val(gain).data();
                let mut dx = vec![0.0; m * d];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..m {
                    let (mean, rstd) = stats[r];
                    let xr = &xs[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    for c in 0..d {
                        xhat[c] = (xr[c] - mean) * rstd;
                        dxhat[c] = gr[c] * gn[c];
                        dg[c] += gr[c] * xhat[c];
                        db[c] += gr[c];
                    }
                    let s1: f64 = dxhat.iter().sum::<f64>() / d as f64;
                    let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        dx[r * d + c] = rstd * (dxhat[c] - s1 - xhat[c] * s2);
                    }
                }
                out.push((*x, like(x, dx)));
                out.push((*gain, like(gain, dg)));
                out.push((*bias, like(bias, db)));
            }
            Op::Attention { q, k, v, dims, .. } => {
                let Saved::Attention(cache) = &node.saved else {
                    return Err(Error::contract("attention cache missing"));
                };
                let rows = val(q).rows();
                let (dq, dk, dv) =
                    kernels::attention_backward(val(q).data(), val(k).data(), val(v).data(), g, rows, *dims, cache);
                out.push((*q, like(q, dq)));
                out.push((*k, like(k, dk)));
                out.push((*v, like(v, dv)));
            }
            Op::GatherRows { table, indices } => {
                let c = val(table).cols();
                let mut dt = vec![0.0; val(table).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for (d, s) in dt[i * c..(i + 1) * c].iter_mut().zip(&g[r * c..(r + 1) * c]) {
                        *d += s;
                    }
                }
                out.push((*table, like(table, dt)));
            }
            Op::Transpose { a } => {
                let (r, c) = val(a).require_rank2("transpose")?;
                out.push((*a, like(a, kernels::transpose(g, c, r))));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).numel();
                    out.push((*p, like(p, g[offset..offset + n].to_vec())));
                    offset += n;
                }
            }
            Op::SumAll { a } => {
                out.push((*a, Tensor::filled(val(a).shape(), g[0])));
            }
            Op::LogCosh { pred, target } => {
                let p = val(pred).data();
                let scale = g[0] / p.len() as f64;
                out.push((
                    *pred,
                    like(pred, p.iter().zip(target.data()).map(|(a, b)| scale * (a - b).tanh()).collect()),
                ));
            }
        }
        Ok(out)
    }
}
