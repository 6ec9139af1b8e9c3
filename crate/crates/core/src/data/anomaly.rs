//! Labelled anomaly injection.

use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::SeriesFrame;
use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Adds `magnitude × range` to the affected metrics.
    Spike,
    /// Holds each affected metric at its value just before the segment.
    Flatline,
    /// Replaces derived metrics with an unrelated sine of the same scale.
    CorrelationBreak,
}

fn default_metric_fraction() -> f64 {
    0.3
}

/// What to inject; placements are drawn from the caller's RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyPlan {
    pub count: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub magnitude: f64,
    pub kinds: Vec<AnomalyKind>,
    /// First index at which a segment may begin.
    #[serde(default)]
    pub start: usize,
    /// Share of the entity's metrics each anomaly touches (at least one).
    #[serde(default = "default_metric_fraction")]
    pub metric_fraction: f64,
}

impl Default for AnomalyPlan {
    fn default() -> Self {
        Self {
            count: 0,
            min_duration: 5,
            max_duration: 20,
            magnitude: 0.5,
            kinds: vec![AnomalyKind::Spike],
            start: 0,
            metric_fraction: default_metric_fraction(),
        }
    }
}

impl AnomalyPlan {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.count == 0 {
            return Ok(());
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return Err(Error::Plan(format!(
                "duration range {}..={} is invalid",
                self.min_duration, self.max_duration
            )));
        }
        if self.start + self.max_duration > n_points {
            return Err(Error::Plan(format!(
                "anomalies up to {} points starting at {} do not fit a {n_points}-point frame",
                self.max_duration, self.start
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::Plan("no anomaly kinds given".into()));
        }
        if !(self.metric_fraction > 0.0 && self.metric_fraction <= 1.0) {
            return Err(Error::Plan("metric_fraction must be in (0, 1]".into()));
        }
        if !self.magnitude.is_finite() {
            return Err(Error::Plan("magnitude must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedAnomaly {
    pub kind: AnomalyKind,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub metrics: Vec<usize>,
}

/// `round(fraction·n_metrics)` of the candidates, so every kind touches the
/// same number of metrics when enough candidates exist.
fn pick_metrics(candidates: &[usize], n_metrics: usize, fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    let k = ((fraction * n_metrics as f64).round() as usize).clamp(1, candidates.len());
    let mut picked: Vec<usize> = sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    picked.sort_unstable();
    picked
}

/// Draws pairwise-disjoint, non-adjacent `[start, end)` segments.
pub fn place_segments(plan: &AnomalyPlan, n_points: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    plan.validate(n_points)?;
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(plan.count);
    for _ in 0..plan.count {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::Plan(format!(
                    "could not place {} disjoint anomalies in {} points",
                    plan.count,
                    n_points - plan.start
                )));
            }
            let dur = rng.random_range(plan.min_duration..=plan.max_duration);
            let s = rng.random_range(plan.start..=n_points - dur);
            let e = s + dur;
            // Keep a gap so segments stay separate label runs.
            if placed.iter().all(|&(a, b)| e < a || s > b) {
                placed.push((s, e));
                break;
            }
        }
    }
    Ok(placed)
}

/// Applies `plan` and marks exactly the injected points in the labels.
pub fn inject_anomalies(frame: &SeriesFrame, plan: &AnomalyPlan, rng: &mut impl Rng) -> Result<SeriesFrame> {
    let n_points = frame.len();
    let segments = place_segments(plan, n_points, rng)?;
    let n = frame.n_metrics();
    let all: Vec<usize> = (0..n).collect();
    let derived: Vec<usize> = frame.meta.recipes.iter().map(|(i, _)| *i).collect();
    let mut out = frame.clone();
    let mut labels = frame.labels().map_or_else(|| vec![0u8; n_points], <[u8]>::to_vec);
    let ranges: Vec<(f64, f64)> = frame
        .values()
        .iter()
        .map(|m| m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x))))
        .collect();

    for (s, e) in segments {
        let kind = plan.kinds[rng.random_range(0..plan.kinds.len())];
        let candidates = match kind {
            AnomalyKind::CorrelationBreak if !derived.is_empty() => &derived,
            _ => &all,
        };
        let metrics = pick_metrics(candidates, n, plan.metric_fraction, rng);
        let values = out.values_mut();
        for &i in &metrics {
            let (lo, hi) = ranges[i];
            match kind {
                AnomalyKind::Spike => {
                    let bump = plan.magnitude * (hi - lo);
                    for x in &mut values[i][s..e] {
                        *x += bump;
                    }
                }
                AnomalyKind::Flatline => {
                    let held = values[i][s.saturating_sub(1)];
                    for x in &mut values[i][s..e] {
                        *x = held;
                    }
                }
                AnomalyKind::CorrelationBreak => {
                    let omega = rng.random_range(4.0..12.0);
                    let phase = rng.random_range(0.0..TAU);
                    let (mid, amp) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
                    for (k, x) in values[i][s..e].iter_mut().enumerate() {
                        *x = mid + amp * (k as f64 / omega + phase).sin();
                    }
                }
            }
        }
        labels[s..e].iter_mut().for_each(|l| *l = 1);
        out.meta.anomalies.push(crate::data::anomaly::InjectedAnomaly { kind, start: s, end: e, metrics });
    }
    out.set_labels(Some(labels))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(t: usize) -> SeriesFrame {
        let rows = (0..4).map(|i| (0..t).map(|k| ((k + i) as f64 / 7.0).sin()).collect()).collect();
        SeriesFrame::from_values(rows, 0).unwrap()
    }

    #[test]
    fn single_spike_labels_its_points() {
        let plan = AnomalyPlan { count: 1, min_duration: 5, max_duration: 5, start: 100, ..AnomalyPlan::default() };
        let f = frame(105);
        let out = inject_anomalies(&f, &plan, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let labels = out.labels().unwrap();
        assert_eq!(labels.iter().map(|&l| l as usize).sum::<usize>(), 5);
        assert!(labels[100..105].iter().all(|&l| l == 1));
        let a = &out.meta.anomalies[0];
        assert_eq!((a.start, a.end), (100, 105));
        for &i in &a.metrics {
            assert!(out.metric(i)[100] > f.metric(i)[100]);
        }
    }

    #[test]
    fn no_anomalies_means_zero_labels() {
        let f = frame(200);
        let out = inject_anomalies(&f, &AnomalyPlan::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.labels().unwrap().iter().all(|&l| l == 0));
        assert_eq!(out.values(), f.values());
    }

    #[test]
    fn ten_anomalies_are_deterministic_and_disjoint() {
        let plan = AnomalyPlan {
            count: 10,
            min_duration: 5,
            max_duration: 20,
            kinds: vec![AnomalyKind::Spike, AnomalyKind::Flatline, AnomalyKind::CorrelationBreak],
            ..AnomalyPlan::default()
        };
        let f = frame(2000);
        let a = inject_anomalies(&f, &plan, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = inject_anomalies(&f, &plan, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let segs = &a.meta.anomalies;
        assert_eq!(segs.len(), 10);
        for (i, x) in segs.iter().enumerate() {
            assert!((5..=20).contains(&(x.end - x.start)));
            for y in &segs[i + 1..] {
                assert!(x.end < y.start || y.end < x.start, "{x:?} overlaps {y:?}");
            }
        }
        let mass: usize = segs.iter().map(|x| x.end - x.start).sum();
        assert_eq!(a.labels().unwrap().iter().map(|&l| l as usize).sum::<usize>(), mass);
    }

    #[test]
    fn metric_count_follows_entity_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let derived = [6, 9, 11, 12, 13, 14, 15, 16, 17];
        let picked = pick_metrics(&derived, 18, 0.3, &mut rng);
        assert_eq!(picked.len(), 5);
        assert!(picked.iter().all(|i| derived.contains(i)));
        assert_eq!(pick_metrics(&[3, 4], 18, 0.3, &mut rng), vec![3, 4]);
        assert_eq!(pick_metrics(&[0, 1, 2, 3], 4, 0.01, &mut rng).len(), 1);
    }

    #[test]
    fn anomaly_longer_than_frame_is_a_plan_error() {
        let plan = AnomalyPlan { count: 1, min_duration: 50, max_duration: 50, ..AnomalyPlan::default() };
        assert!(matches!(inject_anomalies(&frame(40), &plan, &mut ChaCha8Rng::seed_from_u64(1)), Err(Error::Plan(_))));
    }
}
