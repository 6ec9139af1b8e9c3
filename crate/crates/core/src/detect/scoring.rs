use std::ops::Range;

use crate::data::{window::window_len, SeriesFrame, WindowSample, SEGMENTS};
use crate::error::{Error, Result};
use crate::model::GenAdModel;

/// Windows reconstructed per batch while scoring.
const SCORE_CHUNK: usize = 64;

/// Absolute reconstruction errors over the scored part of a series.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    /// `N × T'`, metric-major.
    pub errors: Vec<Vec<f64>>,
    pub timestamps: Vec<i64>,
    /// Index in the source series of the first scored point.
    pub offset: usize,
}

impl ErrorSeries {
    pub fn n_metrics(&self) -> usize {
        self.errors.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Scored points `range` (indices into this series, not the source).
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::contract(format!("slice {range:?} outside {} scored points", self.len())));
        }
        Ok(Self {
            errors: self.errors.iter().map(|e| e[range.clone()].to_vec()).collect(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            offset: self.offset + range.start,
        })
    }

    /// Splits at source index `at`: points before it and points from it on.
    pub fn split_at_source(&self, at: usize) -> Result<(Self, Self)> {
        let k = at.saturating_sub(self.offset).min(self.len());
        Ok((self.slice(0..k)?, self.slice(k..self.len())?))
    }
}

/// Reconstruction errors for points `[4·t_e, T)` of a normalized frame,
/// from windows at stride `t_e` plus one aligned to the end.
pub fn score(frame: &SeriesFrame, model: &GenAdModel) -> Result<ErrorSeries> {
    let t_e = model.config().t_e;
    let len = frame.len();
    if len < window_len(t_e) {
        return Err(Error::Data(format!("series too short: {len} points, need at least {}", window_len(t_e))));
    }
    if frame.n_metrics() != model.config().n_metrics {
        return Err(Error::shape(format!(
            "frame has {} metrics, model expects {}",
            frame.n_metrics(),
            model.config().n_metrics
        )));
    }
    let offset = (SEGMENTS - 1) * t_e;
    // (window origin, first target point to keep)
    let mut plan: Vec<(usize, usize)> =
        (0..).step_by(t_e).take_while(|o| o + window_len(t_e) <= len).map(|o| (o, 0)).collect();
    let covered = plan.last().map_or(0, |&(o, _)| o + window_len(t_e));
    if covered < len {
        plan.push((len - window_len(t_e), t_e - (len - covered)));
    }
    let mut errors = vec![Vec::with_capacity(len - offset); frame.n_metrics()];
    for chunk in plan.chunks(SCORE_CHUNK) {
        let windows =
            chunk.iter().map(|&(o, _)| WindowSample::from_frame(frame, o, t_e)).collect::<Result<Vec<_>>>()?;
        for (rec, &(_, skip)) in model.reconstruct_windows(&windows)?.iter().zip(chunk) {
            for (i, e) in errors.iter_mut().enumerate() {
                e.extend_from_slice(&rec.errors.row(i)[skip..]);
            }
        }
    }
    Ok(ErrorSeries { errors, timestamps: frame.timestamps()[offset..].to_vec(), offset })
}
