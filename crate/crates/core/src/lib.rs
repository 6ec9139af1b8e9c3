//! Multivariate time-series anomaly detection by masked reconstruction.
//!
//! A window of `5·t_e` points is cut into five segments; the last segment of
//! a random subset of metrics is replaced by a fixed random series and an
//! attention network over the (metric, segment) token grid reconstructs it.
//! Reconstruction errors are turned into anomaly flags by per-metric
//! histogram-quantile gates and an entity-level count gate.

pub mod data;
pub mod detect;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
