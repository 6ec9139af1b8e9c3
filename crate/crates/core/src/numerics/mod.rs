//! Dense tensors, a recording tape for reverse-mode gradients, Adam, and
//! finite-difference gradient checks. All arithmetic is `f64` and sequential.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod suite;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::AttentionDims;
pub use ops::{log_cosh_loss, scaled_dot_attention, softmax_rows};
pub use suite::primitive_checks;
pub use tensor::Tensor;
