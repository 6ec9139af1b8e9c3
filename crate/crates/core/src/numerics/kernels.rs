//! Slice-level kernels shared by the tape and the standalone ops.
//!
//! Every reduction runs in a fixed order so results are reproducible
//! bit-for-bit, and row `i` of a product never depends on other rows.

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// `out[m,n] += a[m,k] · b[k,n]`.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&aik, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            axpy(aik, b_row, out_row);
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(n)) {
        for (&aik, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            axpy(aik, b_row, out_row);
        }
    }
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let bt = transpose(b, n, k);
    matmul(a, &bt, m, k, n)
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha == 0.0 {
        return;
    }
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// `log(cosh(d))` via `|d| + ln((1 + e^{-2|d|}) / 2)`, finite for any finite `d`.
#[inline]
pub fn log_cosh(d: f64) -> f64 {
    let a = d.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Saved state of one attention block, enough to run its backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    /// Per (group, head): key permutation used for every reduction over keys.
    pub orders: Vec<Vec<usize>>,
    /// Per (group, head): `t × t` probabilities with columns in canonical key order.
    pub probs: Vec<Vec<f64>>,
}

/// Shape of a batched multi-head self-attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    /// Tokens per group; groups never attend to each other.
    pub group: usize,
    pub heads: usize,
    /// Query/key width per head.
    pub dk: usize,
    /// Value width per head.
    pub dv: usize,
}

fn extract_head(src: &[f64], width: usize, rows: std::ops::Range<usize>, col0: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * dh);
    for r in rows {
        out.extend_from_slice(&src[r * width + col0..r * width + col0 + dh]);
    }
    out
}

/// Orders key rows by content (key bits, then value bits) so sums over keys
/// do not depend on token position.
fn canonical_order(k: &[f64], v: &[f64], t: usize, dk: usize, dv: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        let ka = &k[a * dk..(a + 1) * dk];
        let kb = &k[b * dk..(b + 1) * dk];
        for (x, y) in ka.iter().zip(kb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        let va = &v[a * dv..(a + 1) * dv];
        let vb = &v[b * dv..(b + 1) * dv];
        for (x, y) in va.iter().zip(vb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    order
}

/// Batched multi-head scaled dot-product self-attention.
///
/// `q`, `k` are `[rows, heads·dk]`, `v` is `[rows, heads·dv]`; rows are split
/// into consecutive groups of `dims.group` tokens. `allowed`, when given, is a
/// `group × group` boolean matrix (query-major) restricting which keys a query
/// may attend to; every row must allow at least one key.
pub fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    rows: usize,
    dims: AttentionDims,
    allowed: Option<&[bool]>,
) -> (Vec<f64>, AttentionCache) {
    let AttentionDims { group: t, heads, dk, dv } = dims;
    let (wq, wv) = (heads * dk, heads * dv);
    let groups = rows / t;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = vec![0.0; rows * wv];
    let mut cache =
        AttentionCache { orders: Vec::with_capacity(groups * heads), probs: Vec::with_capacity(groups * heads) };
    for g in 0..groups {
        let span = g * t..(g + 1) * t;
        for h in 0..heads {
            let qh = extract_head(q, wq, span.clone(), h * dk, dk);
            let kh = extract_head(k, wq, span.clone(), h * dk, dk);
            let vh = extract_head(v, wv, span.clone(), h * dv, dv);
            let order = canonical_order(&kh, &vh, t, dk, dv);
            // Keys and values permuted into canonical order; K transposed for axpy-form products.
            let mut kt = vec![0.0; dk * t];
            let mut vc = vec![0.0; t * dv];
            for (jj, &j) in order.iter().enumerate() {
                for c in 0..dk {
                    kt[c * t + jj] = kh[j * dk + c];
                }
                vc[jj * dv..(jj + 1) * dv].copy_from_slice(&vh[j * dv..(j + 1) * dv]);
            }
            let mut probs = matmul(&qh, &kt, t, dk, t);
            for (i, row) in probs.chunks_exact_mut(t).enumerate() {
                for x in row.iter_mut() {
                    *x *= scale;
                }
                if let Some(mask) = allowed {
                    for (jj, &j) in order.iter().enumerate() {
                        if !mask[i * t + j] {
                            row[jj] = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_in_place(row);
            }
            let oh = matmul(&probs, &vc, t, t, dv);
            for (i, r) in span.clone().enumerate() {
                out[r * wv + h * dv..r * wv + (h + 1) * dv].copy_from_slice(&oh[i * dv..(i + 1) * dv]);
            }
            cache.orders.push(order);
            cache.probs.push(probs);
        }
    }
    (out, cache)
}

/// Gradients of [`attention_forward`] with respect to `q`, `k`, `v`.
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d_out: &[f64],
    rows: usize,
    dims: AttentionDims,
    cache: &AttentionCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttentionDims { group: t, heads, dk, dv } = dims;
    let (wq, wv) = (heads * dk, heads * dv);
    let groups = rows / t;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = vec![0.0; rows * wq];
    let mut dkk = vec![0.0; rows * wq];
    let mut dvv = vec![0.0; rows * wv];
    for g in 0..groups {
        let span = g * t..(g + 1) * t;
        for h in 0..heads {
            let idx = g * heads + h;
            let order = &cache.orders[idx];
            let p = &cache.probs[idx];
            let qh = extract_head(q, wq, span.clone(), h * dk, dk);
            let kh = extract_head(k, wq, span.clone(), h * dk, dk);
            let vh = extract_head(v, wv, span.clone(), h * dv, dv);
            let doh = extract_head(d_out, wv, span.clone(), h * dv, dv);
            let mut kc = vec![0.0; t * dk];
            let mut vct = vec![0.0; dv * t];
            for (jj, &j) in order.iter().enumerate() {
                kc[jj * dk..(jj + 1) * dk].copy_from_slice(&kh[j * dk..(j + 1) * dk]);
                for c in 0..dv {
                    vct[c * t + jj] = vh[j * dv + c];
                }
            }
            // dP = dO · Vcᵀ ; dVc = Pᵀ · dO
            let dp = matmul(&doh, &vct, t, dv, t);
            let mut dvc = vec![0.0; t * dv];
            matmul_tn_acc(p, &doh, &mut dvc, t, t, dv);
            // dS = P ⊙ (dP − rowsum(P ⊙ dP)), folded with the 1/√dk scale.
            let mut ds = vec![0.0; t * t];
            for i in 0..t {
                let pr = &p[i * t..(i + 1) * t];
                let dpr = &dp[i * t..(i + 1) * t];
                let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                for jj in 0..t {
                    ds[i * t + jj] = pr[jj] * (dpr[jj] - dot) * scale;
                }
            }
            let dqh = matmul(&ds, &kc, t, t, dk);
            let mut dkc = vec![0.0; t * dk];
            matmul_tn_acc(&ds, &qh, &mut dkc, t, t, dk);
            for (i, r) in span.clone().enumerate() {
                dq[r * wq + h * dk..r * wq + (h + 1) * dk].copy_from_slice(&dqh[i * dk..(i + 1) * dk]);
            }
            for (jj, &j) in order.iter().enumerate() {
                let r = g * t + j;
                dkk[r * wq + h * dk..r * wq + (h + 1) * dk].copy_from_slice(&dkc[jj * dk..(jj + 1) * dk]);
                dvv[r * wv + h * dv..r * wv + (h + 1) * dv].copy_from_slice(&dvc[jj * dv..(jj + 1) * dv]);
            }
        }
    }
    (dq, dkk, dvv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
        assert_eq!(matmul_nt(&a, &a, 2, 3, 2), vec![14.0, 32.0, 32.0, 77.0]);
        let mut out = vec![0.0; 9];
        matmul_tn_acc(&a, &a, &mut out, 2, 3, 3);
        assert_eq!(out, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn log_cosh_is_stable() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(1000.0) - (1000.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(log_cosh(-800.0).is_finite());
    }
}
