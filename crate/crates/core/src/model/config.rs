use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which token pairs may attend to each other inside a window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScope {
    /// Every (metric, segment) token sees every other token.
    #[default]
    Full,
    /// Only tokens of the same segment (no temporal attention).
    CrossMetricOnly,
    /// Only tokens of the same metric (no cross-metric attention).
    TemporalOnly,
}

fn d_t_e() -> usize {
    32
}
fn d_d_model() -> usize {
    64
}
fn d_heads() -> usize {
    8
}
fn d_layers() -> usize {
    4
}
fn d_mask_ratio() -> f64 {
    0.2
}
fn d_dropout() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_metrics: usize,
    /// Segment length; a window is `5·t_e` points.
    #[serde(default = "d_t_e")]
    pub t_e: usize,
    #[serde(default = "d_d_model")]
    pub d_model: usize,
    #[serde(default = "d_heads")]
    pub n_heads: usize,
    #[serde(default = "d_layers")]
    pub n_layers: usize,
    #[serde(default = "d_mask_ratio")]
    pub mask_ratio: f64,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub attention: AttentionScope,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults: `t_e` 32, width 64, 8 heads, 4 layers, 20% masking, dropout 0.1.
    pub fn new(n_metrics: usize) -> Self {
        Self {
            n_metrics,
            t_e: d_t_e(),
            d_model: d_d_model(),
            n_heads: d_heads(),
            n_layers: d_layers(),
            mask_ratio: d_mask_ratio(),
            dropout: d_dropout(),
            attention: AttentionScope::Full,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(format!("model config: {m}")));
        if self.n_metrics < 2 {
            return fail(format!("n_metrics must be ≥ 2, got {}", self.n_metrics));
        }
        if self.t_e == 0 || self.d_model == 0 || self.n_heads == 0 {
            return fail("t_e, d_model and n_heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        if self.n_layers < 2 {
            return fail(format!("n_layers must be ≥ 2, got {}", self.n_layers));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_width(&self) -> usize {
        2 * self.d_model
    }

    /// Tokens per window: one per (metric, segment).
    pub fn tokens(&self) -> usize {
        crate::data::SEGMENTS * self.n_metrics
    }

    pub fn window_len(&self) -> usize {
        crate::data::SEGMENTS * self.t_e
    }

    /// Metrics masked per pass.
    pub fn mask_count(&self) -> usize {
        super::mask::mask_count(self.n_metrics, self.mask_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::new(18).validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ModelConfig::new(5);
        for bad in [
            ModelConfig { n_heads: 7, ..base.clone() },
            ModelConfig { mask_ratio: 1.0, ..base.clone() },
            ModelConfig { n_layers: 1, ..base.clone() },
            ModelConfig { n_metrics: 1, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
