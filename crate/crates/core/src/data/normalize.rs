use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::frame::SeriesFrame;
use crate::error::{Error, Result};

pub const CLAMP_LOW: f64 = -0.5;
pub const CLAMP_HIGH: f64 = 1.5;

/// Per-metric min/max fitted on a reference range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(frame: &SeriesFrame, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > frame.len() {
            return Err(Error::contract(format!(
                "fit range {range:?} is empty or outside a {}-point frame",
                frame.len()
            )));
        }
        let (min, max) = frame
            .values()
            .iter()
            .map(|m| {
                m[range.clone()].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
            })
            .unzip();
        Ok(Self { min, max })
    }

    fn check(&self, frame: &SeriesFrame) -> Result<()> {
        if self.min.len() != frame.n_metrics() || self.max.len() != frame.n_metrics() {
            return Err(Error::shape(format!(
                "stats for {} metrics applied to a {}-metric frame",
                self.min.len(),
                frame.n_metrics()
            )));
        }
        Ok(())
    }

    /// Min-max scales each metric, clamping to `[-0.5, 1.5]`; constant metrics map to 0.
    pub fn apply(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let values = frame
            .values()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (lo, span) = (self.min[i], self.max[i] - self.min[i]);
                m.iter()
                    .map(|&x| if span > 0.0 { ((x - lo) / span).clamp(CLAMP_LOW, CLAMP_HIGH) } else { 0.0 })
                    .collect()
            })
            .collect();
        frame.with_values(values)
    }

    /// Maps normalized values back to raw units (exact only where nothing was clamped).
    pub fn invert(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        self.check(frame)?;
        let values = frame
            .values()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (lo, span) = (self.min[i], self.max[i] - self.min[i]);
                m.iter().map(|&x| if span > 0.0 { x * span + lo } else { lo }).collect()
            })
            .collect();
        frame.with_values(values)
    }
}

pub fn fit_normalize(frame: &SeriesFrame, fit_range: Range<usize>) -> Result<(SeriesFrame, NormalizationStats)> {
    let stats = NormalizationStats::fit(frame, fit_range)?;
    Ok((stats.apply(frame)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: Vec<Vec<f64>>) -> SeriesFrame {
        SeriesFrame::from_values(rows, 0).unwrap()
    }

    #[test]
    fn scales_to_unit_interval() {
        let f = frame(vec![vec![0.0, 5.0, 10.0], vec![7.0, 7.0, 7.0]]);
        let (n, stats) = fit_normalize(&f, 0..3).unwrap();
        assert_eq!(n.metric(0), &[0.0, 0.5, 1.0]);
        assert_eq!(n.metric(1), &[0.0, 0.0, 0.0]);
        assert_eq!(stats.max[0], 10.0);
    }

    #[test]
    fn clamps_out_of_range_values() {
        let f = frame(vec![vec![0.0, 10.0, 20.0, -30.0], vec![1.0, 2.0, 3.0, 4.0]]);
        let (n, _) = fit_normalize(&f, 0..2).unwrap();
        assert_eq!(n.metric(0)[2], 1.5);
        assert_eq!(n.metric(0)[3], -0.5);
    }

    #[test]
    fn empty_fit_range_is_a_contract_error() {
        let f = frame(vec![vec![0.0, 1.0], vec![1.0, 2.0]]);
        assert!(matches!(fit_normalize(&f, 1..1), Err(Error::Contract(_))));
    }
}
