use super::frame::SeriesFrame;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Number of equal segments per window; the last one is the reconstruction target.
pub const SEGMENTS: usize = 5;

/// One window of `5·t_e` points split into segments `T_a..T_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub origin: usize,
    t_e: usize,
    /// `n_metrics × 5·t_e`, metric-major.
    data: Vec<f64>,
    n_metrics: usize,
}

impl WindowSample {
    pub fn from_frame(frame: &SeriesFrame, origin: usize, t_e: usize) -> Result<Self> {
        let len = SEGMENTS * t_e;
        if t_e == 0 || origin + len > frame.len() {
            return Err(Error::Data(format!(
                "window at {origin} of length {len} exceeds a {}-point series",
                frame.len()
            )));
        }
        let mut data = Vec::with_capacity(frame.n_metrics() * len);
        for m in frame.values() {
            data.extend_from_slice(&m[origin..origin + len]);
        }
        Ok(Self { origin, t_e, data, n_metrics: frame.n_metrics() })
    }

    /// Builds a window from per-metric rows of length `5·t_e`.
    pub fn from_rows(rows: &[Vec<f64>], t_e: usize) -> Result<Self> {
        if rows.len() < 2 || t_e == 0 || rows.iter().any(|r| r.len() != SEGMENTS * t_e) {
            return Err(Error::shape("window rows must be N ≥ 2 rows of 5·t_e points"));
        }
        Ok(Self { origin: 0, t_e, data: rows.concat(), n_metrics: rows.len() })
    }

    pub fn t_e(&self) -> usize {
        self.t_e
    }

    pub fn n_metrics(&self) -> usize {
        self.n_metrics
    }

    /// All `5·t_e` points of metric `i`.
    pub fn metric(&self, i: usize) -> &[f64] {
        let len = SEGMENTS * self.t_e;
        &self.data[i * len..(i + 1) * len]
    }

    /// Segment `s` (0 = `T_a`, 4 = `T_e`) of metric `i`.
    pub fn segment_of(&self, i: usize, s: usize) -> &[f64] {
        &self.metric(i)[s * self.t_e..(s + 1) * self.t_e]
    }

    /// Segment `s` for every metric as an `N × t_e` tensor.
    pub fn segment(&self, s: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.n_metrics * self.t_e);
        for i in 0..self.n_metrics {
            data.extend_from_slice(self.segment_of(i, s));
        }
        Tensor::new(vec![self.n_metrics, self.t_e], data).expect("non-empty window")
    }

    /// The target segment `T_e`.
    pub fn target(&self) -> Tensor {
        self.segment(SEGMENTS - 1)
    }
}

/// Minimum series length for one window.
pub fn window_len(t_e: usize) -> usize {
    SEGMENTS * t_e
}

pub fn window_count(len: usize, t_e: usize, stride: usize) -> usize {
    if len < window_len(t_e) || stride == 0 {
        0
    } else {
        (len - window_len(t_e)) / stride + 1
    }
}

/// Windows starting at `0, stride, 2·stride, …`.
pub fn make_windows(frame: &SeriesFrame, t_e: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if t_e == 0 || stride == 0 {
        return Err(Error::contract("t_e and stride must be positive"));
    }
    if frame.len() < window_len(t_e) {
        return Err(Error::Data(format!(
            "series too short: {} points, need at least {}",
            frame.len(),
            window_len(t_e)
        )));
    }
    (0..window_count(frame.len(), t_e, stride)).map(|k| WindowSample::from_frame(frame, k * stride, t_e)).collect()
}
