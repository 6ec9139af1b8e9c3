//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

/// Below this magnitude the relative error is measured against the floor.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check every element when the total is at most this many, else a random subset of this size.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, max_elements: 400, seed: 0 }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backward-pass gradients of `loss` against central differences
/// for the graph's parameters. The graph is restored before returning.
pub fn grad_check(graph: &mut Graph, loss: NodeId, opts: GradCheckOptions) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(Error::contract(format!("epsilon {} outside [1e-7, 1e-3]", opts.epsilon)));
    }
    if opts.max_elements < 200 {
        return Err(Error::contract("grad_check samples at least 200 elements"));
    }
    if graph.value(loss).numel() != 1 {
        return Err(Error::contract("grad_check needs a scalar loss"));
    }
    let grads = graph.backward(loss)?;
    let params: Vec<(NodeId, String)> =
        graph.parameters().into_iter().map(|(id, name)| (id, name.to_string())).collect();
    let mut flat = Vec::new();
    for (p, (id, _)) in params.iter().enumerate() {
        for e in 0..graph.value(*id).numel() {
            flat.push((p, e));
        }
    }
    let chosen: Vec<(usize, usize)> = if flat.len() <= opts.max_elements {
        flat
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, flat.len(), opts.max_elements).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| flat[i]).collect()
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (p, e) in chosen {
        let (id, name) = &params[p];
        let original = graph.value(*id).clone();
        let eval_at = |graph: &mut Graph, x: f64| -> Result<f64> {
            let mut t = original.clone();
            t.data_mut()[e] = x;
            graph.set_leaf(*id, t)?;
            graph.replay()?;
            Ok(graph.value(loss).data()[0])
        };
        let x0 = original.data()[e];
        let plus = eval_at(graph, x0 + opts.epsilon)?;
        let minus = eval_at(graph, x0 - opts.epsilon)?;
        graph.set_leaf(*id, original)?;
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let analytic = grads.get(*id).map_or(0.0, |g| g.data()[e]);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.clone(), e));
        }
    }
    graph.replay()?;
    Ok(report)
}
