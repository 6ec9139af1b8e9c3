//! Fleet pre-training, per-entity fine-tuning and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngDigest, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use trainer::{entity_trainer, finetune, fleet_trainer, pretrain, train_scratch, LossRecord, TrainRun, Trainer};
