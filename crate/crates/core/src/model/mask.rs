use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// `clamp(round(ratio·n), 1, n−1)`.
pub fn mask_count(n_metrics: usize, mask_ratio: f64) -> usize {
    let k = (mask_ratio * n_metrics as f64).round() as usize;
    k.clamp(1, n_metrics.saturating_sub(1).max(1))
}

/// Metrics whose `T_e` segment is hidden in one pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    indices: Vec<usize>,
}

impl MaskPlan {
    /// An explicit plan; indices are deduplicated and sorted.
    pub fn new(mut indices: Vec<usize>, n_metrics: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.iter().any(|&i| i >= n_metrics) {
            return Err(Error::shape(format!("mask index out of range for {n_metrics} metrics")));
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self { indices: vec![] }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Uniformly draws `mask_count(n, ratio)` distinct metrics.
pub fn build_mask_plan(n_metrics: usize, mask_ratio: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    if n_metrics < 2 {
        return Err(Error::contract(format!("masking needs at least 2 metrics, got {n_metrics}")));
    }
    let k = mask_count(n_metrics, mask_ratio);
    MaskPlan::new(sample(rng, n_metrics, k).into_vec(), n_metrics)
}

/// Partitions metrics into consecutive groups of `k`, so every metric is
/// masked in exactly one inference pass.
pub fn inference_groups(n_metrics: usize, k: usize) -> Vec<MaskPlan> {
    (0..n_metrics).collect::<Vec<_>>().chunks(k.max(1)).map(|c| MaskPlan { indices: c.to_vec() }).collect()
}
