//! Branch encoders, the stage-one projection head, feature concatenation and
//! the linear classifier with its cross-entropy loss.

mod model;
mod network;
mod params;

pub use model::{argmax, feature_matrix, FusedModel, ProjectionConfig, Stage1Model, NUM_CLASSES};
pub use network::{
    classify, cross_entropy, cross_entropy_value, encode, image_tensor, ClassifierHead, Encoder, EncoderConfig,
    ProjectionHead,
};
pub use params::{ParamSet, Trainable};

use crate::error::{Error, Result};

/// Per-branch features and their concatenation, fundus first.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    fused: Vec<f64>,
    split: usize,
}

impl FusedFeature {
    pub fn fundus(&self) -> &[f64] {
        &self.fused[..self.split]
    }
    pub fn thick(&self) -> &[f64] {
        &self.fused[self.split..]
    }
    pub fn fused(&self) -> &[f64] {
        &self.fused
    }
    pub fn unfuse(&self) -> (Vec<f64>, Vec<f64>) {
        (self.fundus().to_vec(), self.thick().to_vec())
    }
}

pub fn fuse(f_fundus: &[f64], f_thick: &[f64]) -> Result<FusedFeature> {
    if f_fundus.len() != f_thick.len() {
        return Err(Error::Shape(format!("feature widths {} and {} differ", f_fundus.len(), f_thick.len())));
    }
    Ok(FusedFeature { fused: [f_fundus, f_thick].concat(), split: f_fundus.len() })
}
