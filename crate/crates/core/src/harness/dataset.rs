use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::stratified_kfold;
use crate::error::{Error, Result, StageExt};
use crate::image::{Image, Rgb8};
use crate::rng;
use crate::supcon::Branch;
use crate::thickness::{generate_thickness_map, ThicknessConfig};
use crate::volume::{check_grade, save_volume, synth_case, Grade, PhantomSpec};

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub seed: u64,
    /// Cases per grade.
    pub class_counts: [usize; 3],
    pub folds: usize,
    pub phantom: PhantomSpec,
    pub thickness: ThicknessConfig,
    pub save_volumes: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            // 50 / 26 / 24 scaled to 120 cases
            class_counts: [60, 31, 29],
            folds: 5,
            phantom: PhantomSpec::default(),
            thickness: ThicknessConfig { t_hi: 32.0, ..ThicknessConfig::default() },
            save_volumes: false,
        }
    }
}

impl DatasetSpec {
    pub fn num_cases(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// Grade of every case, shuffled with the dataset seed.
    pub fn grades(&self) -> Vec<Grade> {
        let mut g: Vec<Grade> =
            self.class_counts.iter().enumerate().flat_map(|(c, &n)| vec![c as Grade; n]).collect();
        g.shuffle(&mut rng::stream(self.seed, &[0xda7a]));
        g
    }

    pub fn case_seed(&self, index: usize) -> u64 {
        rng::derive_seed(self.seed, &[0xca5e, index as u64])
    }
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub grade: Grade,
    pub fundus: PathBuf,
    pub thickness: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cases: Vec<CaseRecord>,
    /// Validation fold of each case.
    pub folds: Vec<usize>,
    pub num_folds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DatasetSpec>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn labels(&self) -> Vec<usize> {
        self.cases.iter().map(|c| c.grade as usize).collect()
    }

    /// Structural checks; `root` additionally checks that every file exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::InvalidArgument("manifest has no cases".into()));
        }
        if self.folds.len() != self.cases.len() {
            return Err(Error::InvalidArgument(format!(
                "{} fold entries for {} cases",
                self.folds.len(),
                self.cases.len()
            )));
        }
        for f in 0..self.num_folds {
            if !self.folds.contains(&f) {
                return Err(Error::InvalidArgument(format!("fold {f} is empty")));
            }
        }
        if let Some(f) = self.folds.iter().find(|&&f| f >= self.num_folds) {
            return Err(Error::InvalidArgument(format!("fold {f} out of {}", self.num_folds)));
        }
        for case in &self.cases {
            check_grade(case.grade)?;
            if let Some(root) = root {
                for p in [Some(&case.fundus), Some(&case.thickness), case.volume.as_ref()].into_iter().flatten() {
                    if !root.join(p).is_file() {
                        return Err(Error::FileNotFound(root.join(p)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => e.into(),
        })?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)?;
        m.validate(Some(path.parent().unwrap_or(Path::new("."))))?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Rendered inputs of one case at source resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedCase {
    pub grade: Grade,
    pub fundus: Image,
    pub thickness: Rgb8,
}

/// Phantom, segmentation and thickness map for case `index`.
pub fn render_case(spec: &DatasetSpec, index: usize, grade: Grade) -> Result<(RenderedCase, crate::volume::OctVolume)> {
    let (vol, fundus, _) = synth_case(&spec.phantom, grade, spec.case_seed(index)).stage("phantom")?;
    let map = generate_thickness_map(&vol, &spec.thickness)?;
    Ok((RenderedCase { grade, fundus: fundus.0, thickness: map.rgb }, vol))
}

/// Write every case plus `manifest.json` under `out_dir`.
pub fn synth_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let grades = spec.grades();
    let cases: Vec<CaseRecord> = grades
        .par_iter()
        .enumerate()
        .map(|(i, &grade)| -> Result<CaseRecord> {
            let id = format!("case_{i:03}");
            let rel = PathBuf::from("cases").join(&id);
            std::fs::create_dir_all(out_dir.join(&rel))?;
            let (case, vol) = render_case(spec, i, grade).map_err(|e| e.in_stage(id.clone()))?;
            let record = CaseRecord {
                id,
                grade,
                fundus: rel.join("fundus.png"),
                thickness: rel.join("thickness.png"),
                volume: spec.save_volumes.then(|| rel.join("volume.corovol")),
            };
            case.fundus.to_rgb8().save_png(out_dir.join(&record.fundus))?;
            case.thickness.save_png(out_dir.join(&record.thickness))?;
            if let Some(v) = &record.volume {
                save_volume(&vol, out_dir.join(v))?;
            }
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = grades.iter().map(|&g| g as usize).collect();
    let manifest = DatasetManifest {
        cases,
        folds: stratified_kfold(&labels, spec.folds, spec.seed)?,
        num_folds: spec.folds,
        spec: Some(spec.clone()),
    };
    manifest.validate(Some(out_dir))?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// One case resized to network input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub grade: usize,
    pub fundus: Image,
    pub thickness: Image,
}

impl Sample {
    pub fn image(&self, branch: Branch) -> &Image {
        match branch {
            Branch::Fundus => &self.fundus,
            Branch::Thickness => &self.thickness,
        }
    }
}

/// In-memory dataset with its fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub folds: Vec<usize>,
    pub num_folds: usize,
}

fn fit(image: &Image, size: usize) -> Result<Image> {
    if image.height == size && image.width == size {
        Ok(image.clone())
    } else {
        image.resize(size, size)
    }
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>, fundus_size: usize, thickness_size: usize) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let samples = manifest
            .cases
            .par_iter()
            .map(|c| -> Result<Sample> {
                let fundus = Rgb8::load_png(root.join(&c.fundus))?.to_image();
                let thickness = Rgb8::load_png(root.join(&c.thickness))?.to_image();
                Ok(Sample {
                    id: c.id.clone(),
                    grade: c.grade as usize,
                    fundus: fit(&fundus, fundus_size)?,
                    thickness: fit(&thickness, thickness_size)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { samples, folds: manifest.folds, num_folds: manifest.num_folds })
    }

    /// Same content as `synth_dataset` followed by `load`, without touching disk.
    pub fn synthesize(spec: &DatasetSpec, fundus_size: usize, thickness_size: usize) -> Result<Self> {
        let grades = spec.grades();
        let samples = grades
            .par_iter()
            .enumerate()
            .map(|(i, &grade)| -> Result<Sample> {
                let (case, _) = render_case(spec, i, grade)?;
                // round-trip through 8 bits exactly as the PNG files do
                let fundus = case.fundus.to_rgb8().to_image();
                Ok(Sample {
                    id: format!("case_{i:03}"),
                    grade: grade as usize,
                    fundus: fit(&fundus, fundus_size)?,
                    thickness: fit(&case.thickness.to_image(), thickness_size)?,
                })
            })
            .collect::<Result<_>>()?;
        let labels: Vec<usize> = grades.iter().map(|&g| g as usize).collect();
        Ok(Dataset { samples, folds: stratified_kfold(&labels, spec.folds, spec.seed)?, num_folds: spec.folds })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.grade).collect()
    }
}
