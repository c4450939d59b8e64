use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{config_hash, TrainConfig};
use super::dataset::Dataset;
use super::folds::split;
use super::metrics::Metrics;
use super::train::{predict_cases, train_stage1, train_stage2, Stage1Outcome, Stage2Init};
use crate::error::{Error, Result};
use crate::supcon::Branch;

/// One row of the ablation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub branches: Vec<Branch>,
    pub contrastive: bool,
}

impl Variant {
    pub fn name(&self) -> String {
        let inputs = if self.branches.len() == 2 { "fused".to_string() } else { self.branches[0].name().to_string() };
        if self.contrastive {
            inputs + "+scl"
        } else {
            inputs
        }
    }

    /// Fundus, thickness and fused inputs, without then with contrastive pretraining.
    pub fn grid() -> Vec<Variant> {
        let inputs = [vec![Branch::Fundus], vec![Branch::Thickness], Branch::ALL.to_vec()];
        [false, true]
            .iter()
            .flat_map(|&contrastive| inputs.iter().map(move |b| Variant { branches: b.clone(), contrastive }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossValConfig {
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub variants: Vec<Variant>,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig::with_seed(0)
    }
}

impl CrossValConfig {
    pub fn with_seed(seed: u64) -> Self {
        CrossValConfig { stage1: TrainConfig::stage1(seed), stage2: TrainConfig::stage2(seed), variants: Variant::grid() }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.stage1.seed = seed;
        self.stage2.seed = seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub variant: Variant,
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
    /// Mean over folds where kappa is defined.
    pub mean_kappa: Option<f64>,
    pub mean_kappa_quadratic: Option<f64>,
    /// Metrics of all validation predictions pooled across folds.
    pub pooled: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub config_hash: String,
    pub num_folds: usize,
    pub variants: Vec<VariantReport>,
}

impl CrossValReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Train and evaluate every variant on every fold. Folds and variants run
/// in parallel; each run draws from its own seeded streams, so the report
/// does not depend on scheduling.
pub fn crossval(data: &Dataset, cfg: &CrossValConfig, log_dir: Option<&Path>) -> Result<CrossValReport> {
    if cfg.variants.is_empty() {
        return Err(Error::InvalidArgument("no variants to evaluate".into()));
    }
    let hash = config_hash(cfg)?;
    let k = data.num_folds;
    let needs_pretraining: Vec<Branch> = Branch::ALL
        .into_iter()
        .filter(|b| cfg.variants.iter().any(|v| v.contrastive && v.branches.contains(b)))
        .collect();

    let per_fold: Vec<Vec<(Metrics, Vec<usize>, Vec<usize>)>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<_> {
            let (train, val) = split(&data.folds, fold);
            let tag = fold as u64;
            let pretrained: Vec<Stage1Outcome> = needs_pretraining
                .par_iter()
                .map(|&b| train_stage1(data, &train, b, &cfg.stage1, tag))
                .collect::<Result<_>>()?;
            if let Some(dir) = log_dir {
                let dir = dir.join(format!("fold{fold}"));
                std::fs::create_dir_all(&dir)?;
                for o in &pretrained {
                    std::fs::write(dir.join(format!("stage1_{}.csv", o.model.branch.name())), o.log.to_csv())?;
                }
            }
            cfg.variants
                .par_iter()
                .map(|v| -> Result<_> {
                    let init = if v.contrastive {
                        Stage2Init::Pretrained(
                            pretrained
                                .iter()
                                .filter(|o| v.branches.contains(&o.model.branch))
                                .map(|o| o.model.clone())
                                .collect(),
                        )
                    } else {
                        Stage2Init::Scratch(v.branches.clone())
                    };
                    let out = train_stage2(data, &train, init, &cfg.stage2, tag)
                        .map_err(|e| e.in_stage(format!("fold {fold}, {}", v.name())))?;
                    if let Some(dir) = log_dir {
                        let path = dir.join(format!("fold{fold}")).join(format!("stage2_{}.csv", v.name()));
                        std::fs::write(path, out.log.to_csv())?;
                    }
                    let (labels, preds) = predict_cases(&out.model, data, &val)?;
                    let metrics = Metrics::from_predictions(&labels, &preds, &hash)?;
                    Ok((metrics, labels, preds))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let variants = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(vi, v)| -> Result<VariantReport> {
            let folds: Vec<Metrics> = per_fold.iter().map(|f| f[vi].0.clone()).collect();
            let labels: Vec<usize> = per_fold.iter().flat_map(|f| f[vi].1.clone()).collect();
            let preds: Vec<usize> = per_fold.iter().flat_map(|f| f[vi].2.clone()).collect();
            Ok(VariantReport {
                name: v.name(),
                variant: v.clone(),
                mean_accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / folds.len() as f64,
                mean_kappa: mean_defined(folds.iter().map(|m| m.kappa)),
                mean_kappa_quadratic: mean_defined(folds.iter().map(|m| m.kappa_quadratic)),
                pooled: Metrics::from_predictions(&labels, &preds, &hash)?,
                folds,
            })
        })
        .collect::<Result<_>>()?;
    let report = CrossValReport { config_hash: hash, num_folds: k, variants };
    if let Some(dir) = log_dir {
        std::fs::write(dir.join("crossval.json"), report.to_json()?)?;
    }
    Ok(report)
}
