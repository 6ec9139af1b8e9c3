//! Ingestion, normalization, windowing and synthetic corpora.

pub mod anomaly;
pub mod csv_io;
pub mod frame;
pub mod normalize;
pub mod synth;
pub mod window;

pub use anomaly::{inject_anomalies, AnomalyKind, AnomalyPlan, InjectedAnomaly};
pub use csv_io::{label_path, load_csv, save_csv};
pub use frame::{FrameMeta, SeriesFrame};
pub use normalize::{fit_normalize, NormalizationStats};
pub use synth::{
    gen_fleet, gen_genad_synthetic, gen_mscred_synthetic, generate, Generator, Recipe, SyntheticSpec, Waveform,
};
pub use window::{make_windows, WindowSample, SEGMENTS};
