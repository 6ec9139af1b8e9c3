//! Finite-difference checks of every tape primitive on random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use super::graph::{Graph, NodeId};
use super::kernels::AttentionDims;
use super::tensor::Tensor;
use crate::error::Result;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    // Magnitudes stay away from 0 so ReLU kinks are never straddled.
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

type Builder = fn(&mut Graph, &mut ChaCha8Rng) -> Result<NodeId>;

fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("matmul", |g, r| {
            let a = g.parameter("a", random(r, &[3, 4]));
            let b = g.parameter("b", random(r, &[4, 5]));
            g.matmul(a, b)
        }),
        ("linear", |g, r| {
            let x = g.parameter("x", random(r, &[3, 4]));
            let w = g.parameter("w", random(r, &[4, 2]));
            let b = g.parameter("b", random(r, &[2]));
            g.linear(x, w, b)
        }),
        ("add", |g, r| {
            let a = g.parameter("a", random(r, &[3, 2]));
            let b = g.parameter("b", random(r, &[3, 2]));
            g.add(a, b)
        }),
        ("sub", |g, r| {
            let a = g.parameter("a", random(r, &[3, 2]));
            let b = g.parameter("b", random(r, &[3, 2]));
            g.sub(a, b)
        }),
        ("mul", |g, r| {
            let a = g.parameter("a", random(r, &[3, 2]));
            let b = g.parameter("b", random(r, &[3, 2]));
            g.mul(a, b)
        }),
        ("scale", |g, r| {
            let a = g.parameter("a", random(r, &[4]));
            g.scale(a, -1.7)
        }),
        ("relu", |g, r| {
            let a = g.parameter("a", random(r, &[3, 3]));
            g.relu(a)
        }),
        ("softmax_rows", |g, r| {
            let a = g.parameter("a", random(r, &[3, 4]));
            g.softmax_rows(a)
        }),
        ("layer_norm", |g, r| {
            let x = g.parameter("x", random(r, &[3, 5]));
            let gain = g.parameter("gain", random(r, &[5]));
            let b = g.parameter("bias", random(r, &[5]));
            g.layer_norm(x, gain, b)
        }),
        ("attention", |g, r| {
            let dims = AttentionDims { group: 3, heads: 2, dk: 2, dv: 2 };
            let q = g.parameter("q", random(r, &[6, 4]));
            let k = g.parameter("k", random(r, &[6, 4]));
            let v = g.parameter("v", random(r, &[6, 4]));
            g.attention(q, k, v, dims, None)
        }),
        ("attention_masked", |g, r| {
            let dims = AttentionDims { group: 3, heads: 1, dk: 2, dv: 3 };
            let q = g.parameter("q", random(r, &[6, 2]));
            let k = g.parameter("k", random(r, &[6, 2]));
            let v = g.parameter("v", random(r, &[6, 3]));
            let allowed = vec![true, false, true, false, true, true, true, true, false];
            g.attention(q, k, v, dims, Some(allowed))
        }),
        ("gather_rows", |g, r| {
            let t = g.parameter("table", random(r, &[3, 2]));
            g.gather_rows(t, vec![2, 0, 2, 1])
        }),
        ("transpose", |g, r| {
            let a = g.parameter("a", random(r, &[2, 3]));
            g.transpose(a)
        }),
        ("concat_rows", |g, r| {
            let a = g.parameter("a", random(r, &[2, 3]));
            let b = g.parameter("b", random(r, &[1, 3]));
            g.concat_rows(vec![a, b])
        }),
        ("sum_all", |g, r| {
            let a = g.parameter("a", random(r, &[2, 3]));
            g.sum_all(a)
        }),
        ("log_cosh", |g, r| {
            let a = g.parameter("a", random(r, &[2, 3]));
            let target = random(r, &[2, 3]);
            g.log_cosh_loss(a, target)
        }),
        ("dropout", |g, r| {
            let a = g.parameter("a", random(r, &[2, 3]));
            g.dropout(a, &[true, false, true, true, false, true], 0.4)
        }),
    ]
}

/// Gradient-checks each primitive under a random linear read-out. With
/// `corrupt`, backward passes are deliberately perturbed.
pub fn primitive_checks(seed: u64, corrupt: bool) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, build) in cases() {
        let mut g = Graph::new();
        let y = build(&mut g, &mut rng)?;
        let w = random(&mut rng, g.value(y).shape());
        let w = g.constant(w);
        let prod = g.mul(y, w)?;
        let loss = g.sum_all(prod)?;
        if corrupt {
            g.corrupt_gradients_for_testing();
        }
        out.push((name, grad_check(&mut g, loss, GradCheckOptions { seed, ..Default::default() })?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for seed in 0..3 {
            for (name, r) in primitive_checks(seed, false).unwrap() {
                assert!(r.max_rel_error < 1e-6, "{name}: {r:?}");
                assert!(r.checked > 0);
            }
        }
    }

    #[test]
    fn corruption_fails_every_primitive() {
        for (name, r) in primitive_checks(0, true).unwrap() {
            assert!(r.max_rel_error > 1e-4, "{name}: {r:?}");
        }
    }
}
