//! The `--config` JSON file:
//!
//! ```json
//! { "model": { "d_model": 64, ... }, "train": { "steps": 2000, ... }, "detect": { "a_r": 0.01 } }
//! ```
//!
//! `model` takes every model field except `n_metrics`, which comes from the
//! data. Unknown fields are rejected.

use std::path::Path;

use genad_core::model::ModelConfig;
use genad_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::{Failure, Outcome};

pub const PRETRAIN_STEPS: usize = 2000;
pub const FINETUNE_STEPS: usize = 10_000;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSettings {
    pub a_r: Option<f64>,
    pub train_points: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Map<String, Value>,
    #[serde(default)]
    pub train: Map<String, Value>,
    #[serde(default)]
    pub detect: DetectSettings,
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("config: {e}"))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    pub fn model_config(&self, n_metrics: usize, seed: Option<u64>) -> Outcome<ModelConfig> {
        if self.model.contains_key("n_metrics") {
            return Err(usage("model.n_metrics is taken from the data"));
        }
        let mut m = self.model.clone();
        m.insert("n_metrics".into(), n_metrics.into());
        if let Some(s) = seed {
            m.insert("seed".into(), s.into());
        }
        let config: ModelConfig = serde_json::from_value(Value::Object(m)).map_err(usage)?;
        config.validate().map_err(usage)?;
        Ok(config)
    }

    /// `steps` precedence: flag, then config file, then `default_steps`.
    pub fn train_config(&self, steps: Option<usize>, default_steps: usize, seed: Option<u64>) -> Outcome<TrainConfig> {
        let mut m = self.train.clone();
        match steps {
            Some(s) => {
                m.insert("steps".into(), s.into());
            }
            None => {
                m.entry("steps").or_insert(default_steps.into());
            }
        }
        if let Some(s) = seed {
            m.insert("seed".into(), s.into());
        }
        serde_json::from_value(Value::Object(m)).map_err(usage)
    }
}
