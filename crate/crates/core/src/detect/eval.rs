use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A maximal run of truth 1s, `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub segments: Vec<Segment>,
}

fn check(pred: &[u8], truth: &[u8]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("prediction has {} points, truth has {}", pred.len(), truth.len())));
    }
    Ok(())
}

/// Maximal runs of non-zero values as `[start, end)`.
pub fn runs(truth: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in truth.iter().enumerate() {
        match (v != 0, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, truth.len()));
    }
    out
}

/// Marks a whole truth segment as predicted once any of its points is.
pub fn point_adjust(pred: &[u8], truth: &[u8]) -> Result<Vec<u8>> {
    check(pred, truth)?;
    let mut out: Vec<u8> = pred.iter().map(|&p| u8::from(p != 0)).collect();
    for (s, e) in runs(truth) {
        if out[s..e].contains(&1) {
            out[s..e].fill(1);
        }
    }
    Ok(out)
}

/// `2PR/(P+R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pointwise counts and scores; call on point-adjusted predictions.
pub fn prf1(pred: &[u8], truth: &[u8]) -> Result<EvalReport> {
    check(pred, truth)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let (precision, recall) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let segments = runs(truth)
        .into_iter()
        .map(|(start, end)| Segment { start, end, detected: pred[start..end].iter().any(|&p| p != 0) })
        .collect();
    Ok(EvalReport { tp, fp, fn_, precision, recall, f1: f1_score(precision, recall), segments })
}

/// [`point_adjust`] then [`prf1`].
pub fn evaluate(pred: &[u8], truth: &[u8]) -> Result<EvalReport> {
    prf1(&point_adjust(pred, truth)?, truth)
}
