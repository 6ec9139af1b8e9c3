use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::scoring::ErrorSeries;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 1000;
/// Largest entity gate tried during calibration.
pub const MAX_GATE_ENTITY: usize = 5;

/// `η ∈ {−0.010, −0.009, …, +0.010}`.
pub fn default_eta_grid() -> Vec<f64> {
    (-10..=10).map(|k| k as f64 / 1000.0).collect()
}

/// Upper edge of the first histogram bin where the empirical CDF reaches
/// `1 − (a_r + eta)`. The last bin's edge is the maximum itself.
pub fn estimate_gate(errors: &[f64], a_r: f64, eta: f64, bins: usize) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::contract("estimate_gate needs at least one error"));
    }
    let rate = a_r + eta;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("a_r + eta = {rate} outside [0, 1)")));
    }
    if bins == 0 {
        return Err(Error::contract("bins must be positive"));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::contract("errors must be finite"));
    }
    let (lo, hi) = errors.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    if hi == lo {
        return Ok(lo);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &e in errors {
        counts[(((e - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let target = (1.0 - rate) * errors.len() as f64;
    let mut cum = 0usize;
    for (b, &c) in counts.iter().enumerate().take(bins - 1) {
        cum += c;
        if cum as f64 >= target {
            return Ok(lo + (b + 1) as f64 * width);
        }
    }
    Ok(hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    /// One gate per metric; a metric is anomalous where its error exceeds it.
    pub gates: Vec<f64>,
    /// Anomalous-metric count at which the entity is flagged.
    pub gate_entity: usize,
    pub a_r: f64,
    pub eta: f64,
    pub bins: usize,
    /// Histogram bin width per metric.
    pub bin_widths: Vec<f64>,
}

impl ThresholdModel {
    /// Per-metric gates at `a_r + eta` over `errors`.
    pub fn fit(errors: &ErrorSeries, a_r: f64, eta: f64, gate_entity: usize, bins: usize) -> Result<Self> {
        let n = errors.n_metrics();
        if gate_entity == 0 || gate_entity > n {
            return Err(Error::contract(format!("gate_entity {gate_entity} outside 1..={n}")));
        }
        let gates = errors.errors.iter().map(|e| estimate_gate(e, a_r, eta, bins)).collect::<Result<Vec<_>>>()?;
        let bin_widths = errors
            .errors
            .iter()
            .map(|e| {
                let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                (hi - lo) / bins as f64
            })
            .collect();
        Ok(Self { gates, gate_entity, a_r, eta, bins, bin_widths })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    /// `N × T'` flags, metric-major.
    pub metric_flags: Vec<Vec<u8>>,
    /// Anomalous metrics per timestamp.
    pub counts: Vec<usize>,
    pub entity: Vec<u8>,
}

/// Metric `i` is anomalous at `t` iff `e_i(t) > gate_i`; the entity iff at
/// least `gate_entity` metrics are.
pub fn detect_two_level(errors: &ErrorSeries, th: &ThresholdModel) -> Result<DetectionResult> {
    if errors.n_metrics() != th.gates.len() {
        return Err(Error::shape(format!("{} error series against {} gates", errors.n_metrics(), th.gates.len())));
    }
    let metric_flags: Vec<Vec<u8>> =
        errors.errors.iter().zip(&th.gates).map(|(e, &g)| e.iter().map(|&x| u8::from(x > g)).collect()).collect();
    let counts: Vec<usize> = (0..errors.len()).map(|t| metric_flags.iter().map(|f| f[t] as usize).sum()).collect();
    let entity = counts.iter().map(|&m| u8::from(m >= th.gate_entity)).collect();
    Ok(DetectionResult { metric_flags, counts, entity })
}

/// Per-metric gates from `val`. With labels, picks `η` from `eta_grid` and the
/// entity gate from `1..=min(N, 5)` maximizing point-adjusted F1 on `val`.
/// Ties go to the setting that raises the fewest alarms on `val`, then the
/// smaller `|η|`, then the smaller entity gate.
pub fn calibrate(val: &ErrorSeries, labels: Option<&[u8]>, a_r: f64, eta_grid: &[f64]) -> Result<ThresholdModel> {
    if val.is_empty() {
        return Err(Error::contract("calibration slice is empty"));
    }
    if !(a_r > 0.0 && a_r < 1.0) {
        return Err(Error::contract(format!("a_r {a_r} outside (0, 1)")));
    }
    let Some(labels) = labels else {
        return ThresholdModel::fit(val, a_r, 0.0, 1, DEFAULT_BINS);
    };
    if labels.len() != val.len() {
        return Err(Error::shape(format!("{} labels for {} scored points", labels.len(), val.len())));
    }
    let mut best: Option<(f64, usize, ThresholdModel)> = None;
    for &eta in eta_grid {
        if !(0.0..1.0).contains(&(a_r + eta)) {
            continue;
        }
        let mut th = ThresholdModel::fit(val, a_r, eta, 1, DEFAULT_BINS)?;
        for gate_entity in 1..=val.n_metrics().min(MAX_GATE_ENTITY) {
            th.gate_entity = gate_entity;
            let flags = detect_two_level(val, &th)?.entity;
            let alarms = flags.iter().filter(|&&f| f == 1).count();
            let f1 = evaluate(&flags, labels)?.f1;
            let better = match &best {
                None => true,
                Some((bf, ba, b)) => {
                    f1 > *bf
                        || (f1 == *bf
                            && (alarms < *ba
                                || (alarms == *ba
                                    && (eta.abs() < b.eta.abs()
                                        || (eta.abs() == b.eta.abs() && gate_entity < b.gate_entity)))))
                }
            };
            if better {
                best = Some((f1, alarms, th.clone()));
            }
        }
    }
    best.map(|(_, _, th)| th).ok_or_else(|| Error::contract(format!("no η in the grid is valid for a_r {a_r}")))
}
