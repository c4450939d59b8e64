//! Self-supervised and supervised contrastive losses.
//!
//! With `l(i, a) = z_i · z_a / tau` and `A(i)` every row except `i`:
//!
//! - self: `sum_i [ logsumexp_{a in A(i)} l(i, a) - l(i, j(i)) ]`
//! - supervised: `sum_i (1/|P(i)|) sum_{p in P(i)} [ logsumexp_{a in A(i)} l(i, a) - l(i, p) ]`
//!
//! where `j(i)` is the sibling view of row `i` and `P(i)` the other rows
//! sharing its label. Both run through one kernel, so when every `P(i)` is
//! `{j(i)}` the two agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyPositivePolicy {
    Skip,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub empty_positives: EmptyPositivePolicy,
    pub reduction: Reduction,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { temperature: 0.05, empty_positives: EmptyPositivePolicy::Skip, reduction: Reduction::Sum }
    }
}

impl ContrastiveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Labels and view pairing of a `2n`-row batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLayout {
    labels: Vec<usize>,
    pairing: Vec<usize>,
}

impl BatchLayout {
    pub fn new(labels: Vec<usize>, pairing: Vec<usize>) -> Result<Self> {
        if labels.len() != pairing.len() {
            return Err(Error::Shape(format!("{} labels for {} pairing entries", labels.len(), pairing.len())));
        }
        for (i, &j) in pairing.iter().enumerate() {
            if j >= pairing.len() || j == i || pairing[j] != i {
                return Err(Error::InvalidArgument(format!("pairing is not an involution without fixed points at {i}")));
            }
            if labels[i] != labels[j] {
                return Err(Error::InvalidArgument(format!("rows {i} and {j} are paired but labelled differently")));
            }
        }
        Ok(BatchLayout { labels, pairing })
    }

    /// Rows `0..n` are first views and rows `n..2n` their siblings.
    pub fn stacked(source_labels: &[usize]) -> Self {
        let n = source_labels.len();
        let labels = source_labels.iter().chain(source_labels).copied().collect();
        let pairing = (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect();
        BatchLayout { labels, pairing }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }
}

/// Unit-norm embeddings `[2n × d]` with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub z: Tensor,
    pub layout: BatchLayout,
}

const NORM_TOLERANCE: f64 = 1e-6;

fn check_unit_rows(z: &Tensor) -> Result<()> {
    let (n, _) = z.dims2("embedding batch")?;
    for i in 0..n {
        let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("embedding row {i} has norm {norm}")));
        }
    }
    Ok(())
}

impl EmbeddingBatch {
    pub fn new(z: Tensor, layout: BatchLayout) -> Result<Self> {
        let (n, _) = z.dims2("embedding batch")?;
        if n != layout.len() {
            return Err(Error::Shape(format!("{n} embeddings for {} layout rows", layout.len())));
        }
        check_unit_rows(&z)?;
        Ok(EmbeddingBatch { z, layout })
    }
}

/// `P(i)`: every other row with the same label.
pub fn positive_sets(labels: &[usize], i: usize) -> Vec<usize> {
    labels.iter().enumerate().filter(|&(p, &l)| p != i && l == labels[i]).map(|(p, _)| p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossDiagnostics {
    pub skipped_anchors: usize,
    pub used_anchors: usize,
    pub mean_positive_similarity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub loss: Var,
    pub diagnostics: LossDiagnostics,
}

fn contrastive_kernel(g: &mut Graph, z: Var, positives: &[Vec<usize>], cfg: &ContrastiveConfig) -> Result<LossOutput> {
    cfg.validate()?;
    let (n, _) = g.value(z).dims2("contrastive loss")?;
    if n < 2 {
        return Err(Error::DegenerateBatch(format!("contrastive loss needs at least 2 rows, got {n}")));
    }
    if cfg!(debug_assertions) {
        check_unit_rows(g.value(z))?;
    }
    let anchors: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    let skipped = n - anchors.len();
    if skipped > 0 && cfg.empty_positives == EmptyPositivePolicy::Error {
        return Err(Error::DegenerateBatch(format!("{skipped} anchors have no positive")));
    }
    if anchors.is_empty() {
        return Err(Error::DegenerateBatch("every anchor lacks a positive".into()));
    }

    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / cfg.temperature)?;

    let mut denom_idx = Vec::with_capacity(anchors.len() * (n - 1));
    let mut pos_idx = Vec::new();
    let mut pos_w = Vec::new();
    for &i in &anchors {
        denom_idx.extend((0..n).filter(|&a| a != i).map(|a| i * n + a));
        let w = 1.0 / positives[i].len() as f64;
        for &p in &positives[i] {
            pos_idx.push(i * n + p);
            pos_w.push(w);
        }
    }
    let denom = g.gather(logits, &denom_idx)?;
    let denom = g.reshape(denom, &[anchors.len(), n - 1])?;
    let lse = g.logsumexp(denom, 1)?;
    let lse_total = g.sum(lse)?;
    let pos = g.gather(logits, &pos_idx)?;
    let weights = g.leaf(Tensor::vector(pos_w));
    let weighted = g.mul(pos, weights)?;
    let pos_total = g.sum(weighted)?;
    let mut loss = g.sub(lse_total, pos_total)?;
    if cfg.reduction == Reduction::Mean {
        loss = g.scale(loss, 1.0 / anchors.len() as f64)?;
    }

    let sims = g.value(sim).data();
    let mean_positive_similarity = pos_idx.iter().map(|&k| sims[k]).sum::<f64>() / pos_idx.len() as f64;
    Ok(LossOutput {
        loss,
        diagnostics: LossDiagnostics { skipped_anchors: skipped, used_anchors: anchors.len(), mean_positive_similarity },
    })
}

/// Self-supervised loss: each row's only positive is its sibling view.
pub fn self_contrastive(g: &mut Graph, z: Var, layout: &BatchLayout, cfg: &ContrastiveConfig) -> Result<LossOutput> {
    let positives: Vec<Vec<usize>> = layout.pairing.iter().map(|&j| vec![j]).collect();
    contrastive_kernel(g, z, &positives, cfg)
}

/// Supervised loss: positives are all other rows of the same label.
pub fn sup_contrastive(g: &mut Graph, z: Var, layout: &BatchLayout, cfg: &ContrastiveConfig) -> Result<LossOutput> {
    let positives: Vec<Vec<usize>> = (0..layout.len()).map(|i| positive_sets(&layout.labels, i)).collect();
    contrastive_kernel(g, z, &positives, cfg)
}

pub fn self_contrastive_loss(batch: &EmbeddingBatch, cfg: &ContrastiveConfig) -> Result<(f64, LossDiagnostics)> {
    let mut g = Graph::new();
    let z = g.leaf(batch.z.clone());
    let out = self_contrastive(&mut g, z, &batch.layout, cfg)?;
    Ok((g.value(out.loss).item(), out.diagnostics))
}

pub fn sup_contrastive_loss(batch: &EmbeddingBatch, cfg: &ContrastiveConfig) -> Result<(f64, LossDiagnostics)> {
    let mut g = Graph::new();
    let z = g.leaf(batch.z.clone());
    let out = sup_contrastive(&mut g, z, &batch.layout, cfg)?;
    Ok((g.value(out.loss).item(), out.diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit2(deg: f64) -> [f64; 2] {
        let r = deg.to_radians();
        [r.cos(), r.sin()]
    }

    fn batch2(angles: &[f64], labels: Vec<usize>, pairing: Vec<usize>) -> EmbeddingBatch {
        let data = angles.iter().flat_map(|&a| unit2(a)).collect();
        let z = Tensor::new(vec![angles.len(), 2], data).unwrap();
        EmbeddingBatch::new(z, BatchLayout::new(labels, pairing).unwrap()).unwrap()
    }

    #[test]
    fn positive_set_examples() {
        assert_eq!(positive_sets(&[0, 0, 1, 1], 0), vec![1]);
        assert_eq!(positive_sets(&[2, 2, 2, 2], 2), vec![0, 1, 3]);
        assert!(positive_sets(&[0, 1, 1], 0).is_empty());
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let b = batch2(&[30.0, 30.0], vec![0, 0], vec![1, 0]);
        let (l, _) = self_contrastive_loss(&b, &ContrastiveConfig::default()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn single_row_is_rejected() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::matrix(&[&[1.0, 0.0]]).unwrap());
        let layout = BatchLayout { labels: vec![0], pairing: vec![0] };
        assert!(matches!(
            self_contrastive(&mut g, z, &layout, &ContrastiveConfig::default()),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn layout_invariants_are_checked() {
        assert!(BatchLayout::new(vec![0, 0], vec![0, 1]).is_err());
        assert!(BatchLayout::new(vec![0, 1], vec![1, 0]).is_err());
        assert!(BatchLayout::new(vec![0, 0, 1], vec![1, 2, 0]).is_err());
        let s = BatchLayout::stacked(&[4, 5, 4]);
        assert_eq!(s.labels(), &[4, 5, 4, 4, 5, 4]);
        assert_eq!(s.pairing(), &[3, 4, 5, 0, 1, 2]);
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let z = Tensor::matrix(&[&[1.0, 0.0], &[0.5, 0.0]]).unwrap();
        assert!(EmbeddingBatch::new(z, BatchLayout::stacked(&[0])).is_err());
    }

    #[test]
    fn empty_positive_policies() {
        let b = batch2(&[0.0, 10.0, 90.0, 100.0, 200.0, 210.0], vec![0, 0, 1, 1, 2, 2], vec![1, 0, 3, 2, 5, 4]);
        let mut labels = b.layout.labels.clone();
        labels[4] = 3;
        labels[5] = 4;
        // rows 4 and 5 now have unique labels; the pairing invariant no longer
        // holds, so feed the kernel directly
        let positives: Vec<Vec<usize>> = (0..6).map(|i| positive_sets(&labels, i)).collect();
        let mut g = Graph::new();
        let z = g.leaf(b.z.clone());
        let out = contrastive_kernel(&mut g, z, &positives, &ContrastiveConfig::default()).unwrap();
        assert_eq!(out.diagnostics.skipped_anchors, 2);
        assert_eq!(out.diagnostics.used_anchors, 4);
        let strict = ContrastiveConfig { empty_positives: EmptyPositivePolicy::Error, ..Default::default() };
        assert!(matches!(contrastive_kernel(&mut g, z, &positives, &strict), Err(Error::DegenerateBatch(_))));
        let none: Vec<Vec<usize>> = vec![Vec::new(); 6];
        assert!(matches!(
            contrastive_kernel(&mut g, z, &none, &ContrastiveConfig::default()),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn mean_reduction_divides_by_anchors() {
        let b = batch2(&[0.0, 10.0, 90.0, 100.0], vec![0, 0, 1, 1], vec![1, 0, 3, 2]);
        let sum = sup_contrastive_loss(&b, &ContrastiveConfig::default()).unwrap().0;
        let mean_cfg = ContrastiveConfig { reduction: Reduction::Mean, ..Default::default() };
        let mean = sup_contrastive_loss(&b, &mean_cfg).unwrap().0;
        assert!((sum / 4.0 - mean).abs() < 1e-12);
        assert!(ContrastiveConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
