use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-3
}
fn d_validation() -> f64 {
    0.2
}
fn d_log_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Linear ramp from 0 to `lr` over this many steps; 0 keeps `lr` constant.
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Tail share of each entity's training range held out for validation.
    #[serde(default = "d_validation")]
    pub validation_fraction: f64,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
}

impl TrainConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            batch_size: d_batch(),
            lr: d_lr(),
            warmup_steps: 0,
            seed: 0,
            validation_fraction: d_validation(),
            log_every: d_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(format!("train config: {m}")));
        if self.steps == 0 {
            return fail("steps must be ≥ 1".into());
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return fail("batch_size and log_every must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        Ok(())
    }

    /// Learning rate for the 0-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps as u64 {
            self.lr
        } else {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        }
    }

    /// Splits `len` training points into `(fit_end, len)`: windows are drawn
    /// from `[0, fit_end)`, validation targets from `[fit_end, len)`.
    pub fn split(&self, len: usize) -> usize {
        len - (self.validation_fraction * len as f64).floor() as usize
    }
}
