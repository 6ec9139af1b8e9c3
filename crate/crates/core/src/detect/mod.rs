//! Reconstruction errors to anomaly decisions and their evaluation.

pub mod eval;
pub mod report;
pub mod scoring;
pub mod threshold;

pub use eval::{evaluate, f1_score, point_adjust, prf1, runs, EvalReport, Segment};
pub use report::{scores_csv, write_scores, DetectionReport};
pub use scoring::{score, ErrorSeries};
pub use threshold::{
    calibrate, default_eta_grid, detect_two_level, estimate_gate, DetectionResult, ThresholdModel, DEFAULT_BINS,
    MAX_GATE_ENTITY,
};
