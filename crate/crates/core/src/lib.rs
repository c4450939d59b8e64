//! Glaucoma grading from paired fundus photographs and OCT volumes.
//!
//! The pipeline turns each OCT volume into a compact color thickness map
//! (layer segmentation, thickness, turbo colormap, en-face overlay),
//! pretrains one encoder per modality with a supervised contrastive loss,
//! then classifies the concatenated features of both branches.
//!
//! Modules, bottom up:
//! - [`volume`]: OCT volumes, fundus images, seeded phantom cases, `COROVOL1` I/O.
//! - [`segmentation`]: flattening and constrained minimum-cost surface extraction.
//! - [`thickness`]: thickness grids, turbo mapping, projection, overlay.
//! - [`numcore`]: tensors, reverse-mode gradients, Adam, cosine schedule, checkpoints.
//! - [`supcon`]: self-supervised and supervised contrastive losses, augmentation.
//! - [`fusion`]: encoders, projection and classifier heads, cross-entropy.
//! - [`harness`]: datasets, stratified folds, both training stages, metrics.

pub mod error;
pub mod fusion;
pub mod harness;
pub mod image;
pub mod numcore;
pub mod rng;
pub mod segmentation;
pub mod supcon;
pub mod thickness;
pub mod volume;

pub use error::{Error, Result};
