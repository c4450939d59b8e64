use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::{EncoderConfig, ProjectionConfig};
use crate::supcon::{AugmentationSpec, Branch, ContrastiveConfig, EmptyPositivePolicy, Reduction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn tag(self) -> u64 {
        match self {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Cosine decay over `max_epochs` worth of steps.
    Cosine,
    Constant,
}

/// Hyperparameters of one training stage.
///
/// Training stops once the smoothed epoch loss (mean of the last
/// `smoothing` epochs) has not reached a new minimum for `patience` epochs,
/// followed by `tail_epochs` more epochs, or at `max_epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    pub temperature: f64,
    pub reduction: Reduction,
    pub max_epochs: usize,
    pub patience: usize,
    pub tail_epochs: usize,
    pub smoothing: usize,
    pub fundus_size: usize,
    pub thickness_size: usize,
    pub encoder: EncoderConfig,
    pub projection: ProjectionConfig,
    pub freeze_backbones: bool,
    pub augment_fundus: AugmentationSpec,
    pub augment_thickness: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::stage1(0)
    }
}

impl TrainConfig {
    pub fn stage1(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::Stage1,
            seed,
            batch_size: 8,
            lr0: 1e-3,
            schedule: Schedule::Cosine,
            temperature: 0.05,
            reduction: Reduction::Mean,
            max_epochs: 30,
            patience: 5,
            tail_epochs: 10,
            smoothing: 3,
            fundus_size: 64,
            thickness_size: 64,
            encoder: EncoderConfig::default(),
            projection: ProjectionConfig::default(),
            freeze_backbones: false,
            augment_fundus: AugmentationSpec::for_branch(Branch::Fundus),
            augment_thickness: AugmentationSpec::for_branch(Branch::Thickness),
        }
    }

    pub fn stage2(seed: u64) -> Self {
        TrainConfig {
            stage: Stage::Stage2,
            lr0: 2e-3,
            schedule: Schedule::Constant,
            max_epochs: 30,
            ..TrainConfig::stage1(seed)
        }
    }

    /// Input side for a branch.
    pub fn image_size(&self, branch: Branch) -> usize {
        match branch {
            Branch::Fundus => self.fundus_size,
            Branch::Thickness => self.thickness_size,
        }
    }

    pub fn augmentation(&self, branch: Branch) -> AugmentationSpec {
        match branch {
            Branch::Fundus => self.augment_fundus,
            Branch::Thickness => self.augment_thickness,
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.temperature,
            empty_positives: EmptyPositivePolicy::Skip,
            reduction: self.reduction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_batch = if self.stage == Stage::Stage1 { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::InvalidArgument(format!("batch size must be at least {min_batch}")));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("learning rate and temperature must be positive".into()));
        }
        if self.max_epochs == 0 || self.smoothing == 0 {
            return Err(Error::InvalidArgument("max_epochs and smoothing must be positive".into()));
        }
        if self.fundus_size != self.encoder.input_size || self.thickness_size != self.encoder.input_size {
            return Err(Error::InvalidArgument(format!(
                "image sizes ({}, {}) must equal the encoder input {} so both branches share one architecture",
                self.fundus_size, self.thickness_size, self.encoder.input_size
            )));
        }
        self.encoder.final_side()?;
        self.augment_fundus.validate()?;
        self.augment_thickness.validate()
    }
}

/// SHA-256 of the compact JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

fn read_value(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Fields present in the file (`.toml` as TOML, anything else as JSON)
/// replace those of `base`, recursively.
pub fn load_config_over<T: Serialize + DeserializeOwned>(base: &T, path: impl AsRef<Path>) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, read_value(path.as_ref())?);
    Ok(serde_json::from_value(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::stage1(1).validate().unwrap();
        TrainConfig::stage2(1).validate().unwrap();
        let bad = TrainConfig { batch_size: 1, ..TrainConfig::stage1(1) };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::stage2(1) }.validate().is_ok());
        assert!(TrainConfig { lr0: 0.0, ..TrainConfig::stage2(1) }.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = config_hash(&TrainConfig::stage1(1)).unwrap();
        assert_eq!(a, config_hash(&TrainConfig::stage1(1)).unwrap());
        assert_ne!(a, config_hash(&TrainConfig::stage1(2)).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn partial_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "batch_size = 4\n[encoder]\nfeature_width = 32\n").unwrap();
        let c = load_config_over(&TrainConfig::stage2(0), &t).unwrap();
        assert_eq!((c.stage, c.batch_size, c.lr0), (Stage::Stage2, 4, 2e-3));
        assert_eq!((c.encoder.feature_width, c.encoder.channels.len()), (32, 3));
        let j = dir.path().join("c.json");
        std::fs::write(&j, "{\"seed\": 9}").unwrap();
        assert_eq!(load_config_over(&TrainConfig::stage1(0), &j).unwrap().seed, 9);
        let missing = load_config_over(&TrainConfig::stage1(0), dir.path().join("no.json"));
        assert!(matches!(missing, Err(Error::FileNotFound(_))));
    }
}
