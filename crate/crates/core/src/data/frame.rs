use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::anomaly::InjectedAnomaly;
use super::synth::Recipe;
use crate::error::{Error, Result};

/// Provenance carried alongside generated frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    /// Derived metric index and the recipe that produced it.
    pub recipes: Vec<(usize, Recipe)>,
    pub anomalies: Vec<InjectedAnomaly>,
}

/// N metrics sampled on a shared, evenly spaced timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    metric_names: Vec<String>,
    timestamps: Vec<i64>,
    /// Metric-major: `values[i][t]`.
    values: Vec<Vec<f64>>,
    labels: Option<Vec<u8>>,
    pub meta: FrameMeta,
}

impl SeriesFrame {
    pub fn new(
        metric_names: Vec<String>,
        timestamps: Vec<i64>,
        values: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = metric_names.len();
        let t = timestamps.len();
        if n < 2 {
            return Err(Error::Data(format!("a frame needs at least 2 metrics, got {n}")));
        }
        if t == 0 {
            return Err(Error::Data("a frame needs at least one timestamp".into()));
        }
        if values.len() != n || values.iter().any(|v| v.len() != t) {
            return Err(Error::shape(format!("values must be {n}x{t}")));
        }
        if values.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite value in frame".into()));
        }
        if t >= 2 {
            let step = timestamps[1] - timestamps[0];
            if step <= 0 || timestamps.windows(2).any(|w| w[1] - w[0] != step) {
                return Err(Error::Data("timestamps must be strictly increasing with constant spacing".into()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != t || l.iter().any(|&x| x > 1) {
                return Err(Error::Data("labels must be a length-T sequence of 0/1".into()));
            }
        }
        Ok(Self { metric_names, timestamps, values, labels, meta: FrameMeta::default() })
    }

    /// Default names `m0..m{n-1}` on a 60-second grid starting at `start`.
    pub fn from_values(values: Vec<Vec<f64>>, start: i64) -> Result<Self> {
        let names = (0..values.len()).map(|i| format!("m{i}")).collect();
        let t = values.first().map_or(0, Vec::len);
        let ts = (0..t as i64).map(|k| start + 60 * k).collect();
        Self::new(names, ts, values, None)
    }

    pub fn n_metrics(&self) -> usize {
        self.metric_names.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn metric(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Option<Vec<u8>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.len() || l.iter().any(|&x| x > 1) {
                return Err(Error::Data("labels must be a length-T sequence of 0/1".into()));
            }
        }
        self.labels = labels;
        Ok(())
    }

    /// Copy of the points in `range`, metadata dropped.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Data(format!("slice {range:?} outside a {}-point frame", self.len())));
        }
        Self::new(
            self.metric_names.clone(),
            self.timestamps[range.clone()].to_vec(),
            self.values.iter().map(|v| v[range.clone()].to_vec()).collect(),
            self.labels.as_ref().map(|l| l[range.clone()].to_vec()),
        )
    }

    /// Same frame with values replaced; shapes must match.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = Self::new(self.metric_names.clone(), self.timestamps.clone(), values, self.labels.clone())?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}
