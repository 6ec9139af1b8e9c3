//! Masked-reconstruction attention network over the (metric, segment) token grid.

pub mod config;
pub mod mask;
pub mod network;

pub use config::{AttentionScope, ModelConfig};
pub use mask::{build_mask_plan, inference_groups, mask_count, MaskPlan};
pub use network::{gradcheck_model, masked_loss, GenAdModel, Reconstruction, TokenGrid, TrainingBatch};
