//! Contrastive objectives over paired embedding views, and the augmentations
//! that produce the second view of each sample.

mod augment;
mod loss;

pub use augment::{augment, AugmentationSpec, Branch};
pub use loss::{
    positive_sets, self_contrastive, self_contrastive_loss, sup_contrastive, sup_contrastive_loss, BatchLayout,
    ContrastiveConfig, EmbeddingBatch, EmptyPositivePolicy, LossDiagnostics, LossOutput, Reduction,
};
