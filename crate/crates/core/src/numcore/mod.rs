//! Dense tensors with recorded reverse-mode gradients, Adam, the cosine
//! schedule and tensor checkpoints.
//!
//! Deliberately small: no broadcasting beyond the two bias-add ops and
//! scalar scaling, and every reduction sums in a fixed left-to-right order.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{lse, Gradients, Graph, Var};
pub use optim::{adam_step, cosine_lr, AdamState};
pub use tensor::Tensor;
