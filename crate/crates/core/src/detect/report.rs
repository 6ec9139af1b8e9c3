use std::path::Path;

use serde::Serialize;

use super::eval::EvalReport;
use super::scoring::ErrorSeries;
use super::threshold::{DetectionResult, ThresholdModel};
use crate::error::{Error, Result};

/// Contents of `report.json`. Without labels the scores are omitted and the
/// entity flags are included instead.
#[derive(Clone, Debug, Serialize)]
pub struct DetectionReport {
    #[serde(flatten)]
    pub eval: Option<EvalReport>,
    pub eta: f64,
    pub gate_entity: usize,
    pub gates: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<u8>>,
}

impl DetectionReport {
    pub fn new(th: &ThresholdModel, result: &DetectionResult, eval: Option<EvalReport>) -> Self {
        let flags = eval.is_none().then(|| result.entity.clone());
        Self { eval, eta: th.eta, gate_entity: th.gate_entity, gates: th.gates.clone(), flags }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `timestamp,<metric>_err,...,entity_count,entity_flag`.
pub fn scores_csv(errors: &ErrorSeries, names: &[String], result: &DetectionResult) -> Result<Vec<u8>> {
    if names.len() != errors.n_metrics() || result.entity.len() != errors.len() {
        return Err(Error::shape("scores, names and detections disagree in size"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["timestamp".to_string()];
    header.extend(names.iter().map(|n| format!("{n}_err")));
    header.extend(["entity_count".into(), "entity_flag".into()]);
    w.write_record(&header)?;
    for t in 0..errors.len() {
        let mut row = vec![errors.timestamps[t].to_string()];
        row.extend(errors.errors.iter().map(|e| e[t].to_string()));
        row.push(result.counts[t].to_string());
        row.push(result.entity[t].to_string());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_scores(path: &Path, errors: &ErrorSeries, names: &[String], result: &DetectionResult) -> Result<()> {
    crate::io::atomic_write(path, &scores_csv(errors, names, result)?)
}
