//! Datasets, stratified folds, both training stages, metrics and the
//! ablation grid.

mod config;
mod crossval;
mod dataset;
mod folds;
mod metrics;
mod train;

pub use config::{config_hash, load_config_over, Schedule, Stage, TrainConfig};
pub use crossval::{crossval, CrossValConfig, CrossValReport, Variant, VariantReport};
pub use dataset::{
    render_case, synth_dataset, CaseRecord, Dataset, DatasetManifest, DatasetSpec, RenderedCase, Sample,
    MANIFEST_FILE,
};
pub use folds::{split, stratified_kfold};
pub use metrics::{cohen_kappa, confusion_matrix, Metrics, Weighting};
pub use train::{
    encoder_init_rng, evaluate, predict_cases, train_stage1, train_stage2, EpochRecord, Stage1Outcome, Stage2Init, Stage2Outcome,
    TrainLog, ALL_CASES,
};
