use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::network::{ClassifierHead, Encoder, EncoderConfig, ProjectionHead};
use super::ParamSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numcore::{Checkpoint, Graph, Tensor, Var};
use crate::rng::Pcg32;
use crate::supcon::Branch;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub hidden: usize,
    pub out_width: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig { hidden: 64, out_width: 128 }
    }
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &BTreeMap<String, Value>, key: &str) -> Result<T> {
    let v = meta.get(key).ok_or_else(|| Error::CheckpointMismatch(format!("checkpoint meta lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::CheckpointMismatch(format!("meta `{key}`: {e}")))
}

fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    let found: String = meta_field(&ckpt.meta, "kind")?;
    if found != kind {
        return Err(Error::CheckpointMismatch(format!("expected a {kind} checkpoint, found {found}")));
    }
    Ok(())
}

fn load_params(params: &mut ParamSet, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
    params.load_from(|name| ckpt.get(&format!("{prefix}{name}")))
}

/// Encoder plus projection head, trained with the contrastive objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub branch: Branch,
    pub encoder: Encoder,
    pub projection: ProjectionHead,
}

impl Stage1Model {
    pub fn new(branch: Branch, encoder: EncoderConfig, projection: ProjectionConfig, rng: &mut Pcg32) -> Result<Self> {
        let encoder = Encoder::new(encoder, rng)?;
        let projection =
            ProjectionHead::new(encoder.config.feature_width, projection.hidden, projection.out_width, rng);
        Ok(Stage1Model { branch, encoder, projection })
    }

    /// Unit-norm embeddings `[n × out_width]`.
    pub fn embed(
        &self,
        g: &mut Graph,
        enc_vars: &[Var],
        proj_vars: &[Var],
        images: &[&Image],
    ) -> Result<Var> {
        let mut rows = Vec::with_capacity(images.len());
        for img in images {
            let x = g.constant(self.encoder.input(img)?);
            rows.push(self.encoder.forward(g, enc_vars, x)?);
        }
        let feats = g.concat(&rows, 0)?;
        self.projection.forward(g, proj_vars, feats)
    }

    pub fn to_checkpoint(&self, mut meta: BTreeMap<String, Value>) -> Checkpoint {
        meta.insert("kind".into(), json!("stage1"));
        meta.insert("branch".into(), json!(self.branch));
        meta.insert("encoder".into(), json!(self.encoder.config));
        meta.insert(
            "projection".into(),
            json!(ProjectionConfig { hidden: self.projection.hidden, out_width: self.projection.out_width }),
        );
        let tensors = self
            .encoder
            .params
            .prefixed("encoder.")
            .chain(self.projection.params.prefixed("projection."))
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, "stage1")?;
        let branch: Branch = meta_field(&ckpt.meta, "branch")?;
        let enc_cfg: EncoderConfig = meta_field(&ckpt.meta, "encoder")?;
        let proj_cfg: ProjectionConfig = meta_field(&ckpt.meta, "projection")?;
        let mut model = Stage1Model::new(branch, enc_cfg, proj_cfg, &mut crate::rng::stream(0, &[]))?;
        load_params(&mut model.encoder.params, ckpt, "encoder.")?;
        load_params(&mut model.projection.params, ckpt, "projection.")?;
        Ok(model)
    }
}

/// One encoder per branch, features concatenated in branch order, then a
/// linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub branches: Vec<(Branch, Encoder)>,
    pub head: ClassifierHead,
}

impl FusedModel {
    pub fn new(branches: Vec<(Branch, Encoder)>, rng: &mut Pcg32) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidArgument("a fused model needs at least one branch".into()));
        }
        let width = branches.iter().map(|(_, e)| e.config.feature_width).sum();
        let head = ClassifierHead::new(width, NUM_CLASSES, rng);
        Ok(FusedModel { branches, head })
    }

    /// Drops the projection heads of pretrained stage-one models.
    pub fn from_stage1(models: Vec<Stage1Model>, rng: &mut Pcg32) -> Result<Self> {
        let mut branches: Vec<(Branch, Encoder)> = models.into_iter().map(|m| (m.branch, m.encoder)).collect();
        for pair in branches.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::CheckpointMismatch(format!("branch {} given twice", pair[0].0.name())));
            }
            if pair[0].1.params.manifest() != pair[1].1.params.manifest() {
                return Err(Error::CheckpointMismatch("branch encoders differ in architecture".into()));
            }
        }
        branches.sort_by_key(|(b, _)| *b);
        FusedModel::new(branches, rng)
    }

    pub fn branch_names(&self) -> Vec<Branch> {
        self.branches.iter().map(|(b, _)| *b).collect()
    }

    /// Concatenated features `[1 × ΣF]` of one sample; `images[b]` feeds branch `b`.
    pub fn features_graph(&self, g: &mut Graph, enc_vars: &[Vec<Var>], images: &[&Image]) -> Result<Var> {
        if images.len() != self.branches.len() {
            return Err(Error::Shape(format!("{} images for {} branches", images.len(), self.branches.len())));
        }
        let mut parts = Vec::with_capacity(images.len());
        for ((_, enc), (vars, img)) in self.branches.iter().zip(enc_vars.iter().zip(images)) {
            let x = g.constant(enc.input(img)?);
            parts.push(enc.forward(g, vars, x)?);
        }
        g.concat(&parts, 1)
    }

    /// Fused feature vector of one sample, outside any training graph.
    pub fn features(&self, images: &[&Image]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars: Vec<Vec<Var>> = self.branches.iter().map(|(_, e)| e.params.bind(&mut g)).collect();
        let f = self.features_graph(&mut g, &vars, images)?;
        Ok(g.value(f).data().to_vec())
    }

    pub fn logits(&self, images: &[&Image]) -> Result<Vec<f64>> {
        super::classify(&self.head, &self.features(images)?)
    }

    /// Class with the largest logit, lowest index on ties.
    pub fn predict(&self, images: &[&Image]) -> Result<usize> {
        Ok(argmax(&self.logits(images)?))
    }

    pub fn to_checkpoint(&self, mut meta: BTreeMap<String, Value>) -> Checkpoint {
        meta.insert("kind".into(), json!("fused"));
        meta.insert("branches".into(), json!(self.branch_names()));
        meta.insert("encoder".into(), json!(self.branches[0].1.config));
        meta.insert("classes".into(), json!(self.head.classes));
        let mut tensors = Vec::new();
        for (b, enc) in &self.branches {
            tensors.extend(enc.params.prefixed(&format!("{}.encoder.", b.name())).map(|(n, t)| (n, t.clone())));
        }
        tensors.extend(self.head.params.prefixed("head.").map(|(n, t)| (n, t.clone())));
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, "fused")?;
        let names: Vec<Branch> = meta_field(&ckpt.meta, "branches")?;
        let enc_cfg: EncoderConfig = meta_field(&ckpt.meta, "encoder")?;
        let classes: usize = meta_field(&ckpt.meta, "classes")?;
        if classes != NUM_CLASSES {
            return Err(Error::CheckpointMismatch(format!("{classes} classes, expected {NUM_CLASSES}")));
        }
        let mut rng = crate::rng::stream(0, &[]);
        let mut branches = Vec::with_capacity(names.len());
        for b in names {
            let mut enc = Encoder::new(enc_cfg.clone(), &mut rng)?;
            load_params(&mut enc.params, ckpt, &format!("{}.encoder.", b.name()))?;
            branches.push((b, enc));
        }
        let mut model = FusedModel::new(branches, &mut rng)?;
        load_params(&mut model.head.params, ckpt, "head.")?;
        Ok(model)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Stack `[1 × W]` rows into a leaf `[n × W]` for head-only training.
pub fn feature_matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    Tensor::new(vec![rows.len(), w], rows.concat())
}
