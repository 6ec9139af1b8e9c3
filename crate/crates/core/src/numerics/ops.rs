//! Tape-free numeric primitives.

use super::kernels::{self, AttentionDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let (r, c) = t.require_rank2("softmax_rows")?;
    let mut data = t.data().to_vec();
    for row in data.chunks_exact_mut(c) {
        kernels::softmax_in_place(row);
    }
    Tensor::new(vec![r, c], data)
}

/// `softmax_rows(Q·Kᵀ/√d)·V` for a single head.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, d: usize) -> Result<Tensor> {
    let (nq, dq) = q.require_rank2("attention q")?;
    let (nk, dk) = k.require_rank2("attention k")?;
    let (nv, dv) = v.require_rank2("attention v")?;
    if dq != d || dk != d || nv != nk {
        return Err(Error::shape(format!("attention: q {nq}x{dq}, k {nk}x{dk}, v {nv}x{dv}, d={d}")));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = kernels::matmul_nt(q.data(), k.data(), nq, d, nk);
    for x in &mut logits {
        *x *= scale;
    }
    for row in logits.chunks_exact_mut(nk) {
        kernels::softmax_in_place(row);
    }
    Tensor::new(vec![nq, dv], kernels::matmul(&logits, v.data(), nq, nk, dv))
}

/// Self-attention variant used by the model: groups of tokens attend among
/// themselves, one head per column block.
pub fn multi_head_self_attention(q: &Tensor, k: &Tensor, v: &Tensor, dims: AttentionDims) -> Result<Tensor> {
    let mut g = super::graph::Graph::new();
    let (qn, kn, vn) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = g.attention(qn, kn, vn, dims, None)?;
    Ok(g.value(out).clone())
}

/// Mean of `log(cosh(pred − target))` over all elements.
pub fn log_cosh_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("log_cosh_loss: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| kernels::log_cosh(p - t)).sum();
    Ok(sum / pred.numel() as f64)
}
