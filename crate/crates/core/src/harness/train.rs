use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{config_hash, Schedule, Stage, TrainConfig};
use super::dataset::Dataset;
use super::metrics::Metrics;
use crate::error::{Error, Result, StageExt};
use crate::fusion::{
    argmax, cross_entropy, feature_matrix, Encoder, FusedModel, Stage1Model, Trainable,
};
use crate::image::Image;
use crate::numcore::{cosine_lr, Checkpoint, Graph, Var};
use crate::rng::{self, Pcg32};
use crate::supcon::{augment, sup_contrastive, BatchLayout, Branch};

/// Fold tag used when training on a whole manifest rather than one fold.
pub const ALL_CASES: u64 = u64::MAX;

const TAG_INIT: u64 = 0;
const TAG_SHUFFLE: u64 = 1;
const TAG_AUGMENT: u64 = 2;
const TAG_HEAD: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub train_accuracy: Option<f64>,
    pub skipped_anchors: usize,
    pub mean_positive_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch at which the patience rule fired.
    pub converged_at: Option<usize>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("epoch,loss,lr,train_accuracy,skipped_anchors,mean_positive_similarity\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                r.loss,
                r.lr,
                opt(r.train_accuracy),
                r.skipped_anchors,
                opt(r.mean_positive_similarity)
            );
        }
        s
    }
}

/// Patience on the smoothed loss, then a fixed tail of epochs.
struct Convergence {
    patience: usize,
    tail: usize,
    window: usize,
    best: f64,
    since_best: usize,
    tail_left: Option<usize>,
    history: Vec<f64>,
    converged_at: Option<usize>,
}

impl Convergence {
    fn new(cfg: &TrainConfig) -> Self {
        Convergence {
            patience: cfg.patience,
            tail: cfg.tail_epochs,
            window: cfg.smoothing,
            best: f64::INFINITY,
            since_best: 0,
            tail_left: None,
            history: Vec::new(),
            converged_at: None,
        }
    }

    /// Record an epoch's loss; false once training should stop.
    fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        self.history.push(loss);
        let w = self.window.min(self.history.len());
        let smoothed = self.history[self.history.len() - w..].iter().sum::<f64>() / w as f64;
        if smoothed < self.best {
            self.best = smoothed;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        match &mut self.tail_left {
            Some(left) => {
                *left = left.saturating_sub(1);
                *left > 0
            }
            None if self.since_best >= self.patience => {
                self.converged_at = Some(epoch);
                self.tail_left = Some(self.tail);
                self.tail > 0
            }
            None => true,
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> Result<f64> {
    match cfg.schedule {
        Schedule::Constant => Ok(cfg.lr0),
        Schedule::Cosine => cosine_lr(step, total, cfg.lr0),
    }
}

fn check_cases(data: &Dataset, cases: &[usize], min: usize) -> Result<()> {
    if cases.len() < min {
        return Err(Error::InvalidArgument(format!("training needs at least {min} cases, got {}", cases.len())));
    }
    if let Some(&i) = cases.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!("case index {i} out of {}", data.len())));
    }
    Ok(())
}

fn check_sizes(data: &Dataset, cfg: &TrainConfig, branches: &[Branch]) -> Result<()> {
    let Some(s) = data.samples.first() else { return Ok(()) };
    for &b in branches {
        let img = s.image(b);
        let want = cfg.image_size(b);
        if img.height != want || img.width != want {
            return Err(Error::Shape(format!(
                "{} images are {}x{}, config expects {want}",
                b.name(),
                img.height,
                img.width
            )));
        }
    }
    Ok(())
}

/// Shuffled batches of `order`, dropping a trailing batch smaller than `min`.
fn batches(order: &[usize], size: usize, min: usize) -> Vec<Vec<usize>> {
    order.chunks(size).filter(|c| c.len() >= min).map(<[usize]>::to_vec).collect()
}

pub fn encoder_init_rng(seed: u64, fold: u64, branch: Branch) -> Pcg32 {
    rng::stream(seed, &[Stage::Stage1.tag(), fold, branch.tag(), TAG_INIT])
}

fn checkpoint_meta(cfg: &TrainConfig, fold: u64, log: &TrainLog) -> Result<BTreeMap<String, Value>> {
    let mut meta = BTreeMap::new();
    meta.insert("config".into(), serde_json::to_value(cfg)?);
    meta.insert("config_hash".into(), json!(config_hash(cfg)?));
    meta.insert("fold".into(), json!(fold));
    meta.insert("epochs".into(), json!(log.records.len()));
    Ok(meta)
}

#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    pub model: Stage1Model,
    pub log: TrainLog,
}

impl Stage1Outcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, fold: u64) -> Result<Checkpoint> {
        Ok(self.model.to_checkpoint(checkpoint_meta(cfg, fold, &self.log)?))
    }
}

/// Contrastive pretraining of one branch. Each batch holds `n` originals
/// followed by one augmented view of each as its positive.
pub fn train_stage1(
    data: &Dataset,
    cases: &[usize],
    branch: Branch,
    cfg: &TrainConfig,
    fold: u64,
) -> Result<Stage1Outcome> {
    cfg.validate()?;
    check_cases(data, cases, 2)?;
    check_sizes(data, cfg, &[branch])?;
    let tag = [Stage::Stage1.tag(), fold, branch.tag()];
    let mut model = Stage1Model::new(
        branch,
        cfg.encoder.clone(),
        cfg.projection,
        &mut encoder_init_rng(cfg.seed, fold, branch),
    )?;
    let mut enc = Trainable::new(model.encoder.params.clone(), cfg.lr0);
    let mut proj = Trainable::new(model.projection.params.clone(), cfg.lr0);
    let aug_spec = cfg.augmentation(branch);
    let contrastive = cfg.contrastive();

    let steps_per_epoch = batches(cases, cfg.batch_size, 2).len();
    let total_steps = cfg.max_epochs * steps_per_epoch;
    let mut conv = Convergence::new(cfg);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.max_epochs {
        let mut order = cases.to_vec();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag[0], tag[1], tag[2], epoch as u64, TAG_SHUFFLE]));
        let (mut loss_sum, mut sim_sum, mut skipped, mut n_batches) = (0.0, 0.0, 0, 0);
        let mut lr = cfg.lr0;
        for batch in batches(&order, cfg.batch_size, 2) {
            lr = learning_rate(cfg, step, total_steps)?;
            let mut views: Vec<Image> = Vec::with_capacity(2 * batch.len());
            views.extend(batch.iter().map(|&i| data.samples[i].image(branch).clone()));
            for &i in &batch {
                let mut r = rng::stream(cfg.seed, &[tag[0], tag[1], tag[2], epoch as u64, TAG_AUGMENT, i as u64]);
                views.push(augment(data.samples[i].image(branch), &aug_spec, &mut r)?);
            }
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].grade).collect();
            let refs: Vec<&Image> = views.iter().collect();

            let mut g = Graph::new();
            let ev = enc.params.bind(&mut g);
            let pv = proj.params.bind(&mut g);
            let z = model.embed(&mut g, &ev, &pv, &refs)?;
            let out = sup_contrastive(&mut g, z, &BatchLayout::stacked(&labels), &contrastive)?;
            let grads = g.backward(out.loss)?;
            enc.step(&ev, &grads, lr)?;
            proj.step(&pv, &grads, lr)?;

            loss_sum += g.value(out.loss).item();
            sim_sum += out.diagnostics.mean_positive_similarity;
            skipped += out.diagnostics.skipped_anchors;
            n_batches += 1;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n_batches as f64,
            lr,
            train_accuracy: None,
            skipped_anchors: skipped,
            mean_positive_similarity: Some(sim_sum / n_batches as f64),
        };
        log::info!(
            "stage1 {} fold {fold} epoch {epoch}: loss {:.5} sim {:.4}",
            branch.name(),
            record.loss,
            sim_sum / n_batches as f64
        );
        if !record.loss.is_finite() {
            return Err(Error::Numeric(format!("stage-1 loss diverged at epoch {epoch}")));
        }
        let keep_going = conv.observe(epoch, record.loss);
        log.records.push(record);
        if !keep_going {
            break;
        }
    }
    log.converged_at = conv.converged_at;
    model.encoder.params = enc.params;
    model.projection.params = proj.params;
    Ok(Stage1Outcome { model, log })
}

/// Starting point of the classification stage.
#[derive(Debug, Clone)]
pub enum Stage2Init {
    /// Contrastively pretrained branches; projection heads are discarded.
    Pretrained(Vec<Stage1Model>),
    /// Encoders at the same initial weights stage one would start from.
    Scratch(Vec<Branch>),
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub model: FusedModel,
    pub log: TrainLog,
}

impl Stage2Outcome {
    pub fn checkpoint(&self, cfg: &TrainConfig, fold: u64) -> Result<Checkpoint> {
        Ok(self.model.to_checkpoint(checkpoint_meta(cfg, fold, &self.log)?))
    }
}

fn sample_images<'a>(data: &'a Dataset, i: usize, branches: &[Branch]) -> Vec<&'a Image> {
    branches.iter().map(|&b| data.samples[i].image(b)).collect()
}

/// Cross-entropy training of the classifier head, and of the encoders
/// unless `freeze_backbones` is set.
pub fn train_stage2(
    data: &Dataset,
    cases: &[usize],
    init: Stage2Init,
    cfg: &TrainConfig,
    fold: u64,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    check_cases(data, cases, 1)?;
    let mut head_rng = rng::stream(cfg.seed, &[Stage::Stage2.tag(), fold, TAG_HEAD]);
    let mut model = match init {
        Stage2Init::Pretrained(models) => {
            for m in &models {
                if m.encoder.config != cfg.encoder {
                    return Err(Error::CheckpointMismatch(format!(
                        "{} encoder architecture differs from the stage-2 config",
                        m.branch.name()
                    )));
                }
            }
            FusedModel::from_stage1(models, &mut head_rng)?
        }
        Stage2Init::Scratch(mut branches) => {
            branches.sort();
            branches.dedup();
            let encoders = branches
                .iter()
                .map(|&b| Ok((b, Encoder::new(cfg.encoder.clone(), &mut encoder_init_rng(cfg.seed, fold, b))?)))
                .collect::<Result<Vec<_>>>()?;
            FusedModel::new(encoders, &mut head_rng)?
        }
    };
    let branches = model.branch_names();
    check_sizes(data, cfg, &branches)?;

    let frozen_features = if cfg.freeze_backbones {
        let rows = cases
            .iter()
            .map(|&i| model.features(&sample_images(data, i, &branches)))
            .collect::<Result<Vec<_>>>()?;
        Some(rows)
    } else {
        None
    };
    let position: BTreeMap<usize, usize> = cases.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut encoders: Vec<Trainable> =
        model.branches.iter().map(|(_, e)| Trainable::new(e.params.clone(), cfg.lr0)).collect();
    let mut head = Trainable::new(model.head.params.clone(), cfg.lr0);
    let steps_per_epoch = batches(cases, cfg.batch_size, 1).len();
    let total_steps = cfg.max_epochs * steps_per_epoch;
    let mut conv = Convergence::new(cfg);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.max_epochs {
        let mut order = cases.to_vec();
        order.shuffle(&mut rng::stream(cfg.seed, &[Stage::Stage2.tag(), fold, epoch as u64, TAG_SHUFFLE]));
        let (mut loss_sum, mut correct, mut seen, mut n_batches) = (0.0, 0, 0, 0);
        let mut lr = cfg.lr0;
        for batch in batches(&order, cfg.batch_size, 1) {
            lr = learning_rate(cfg, step, total_steps)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].grade).collect();
            let mut g = Graph::new();
            let hv = head.params.bind(&mut g);
            let (features, ev): (Var, Vec<Vec<Var>>) = match &frozen_features {
                Some(rows) => {
                    let picked: Vec<Vec<f64>> = batch.iter().map(|i| rows[position[i]].clone()).collect();
                    (g.constant(feature_matrix(&picked)?), Vec::new())
                }
                None => {
                    let ev: Vec<Vec<Var>> = encoders.iter().map(|t| t.params.bind(&mut g)).collect();
                    let mut rows = Vec::with_capacity(batch.len());
                    for &i in &batch {
                        rows.push(model.features_graph(&mut g, &ev, &sample_images(data, i, &branches))?);
                    }
                    (g.concat(&rows, 0)?, ev)
                }
            };
            let logits = model.head.forward(&mut g, &hv, features)?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            let grads = g.backward(loss)?;
            head.step(&hv, &grads, lr)?;
            for (t, vars) in encoders.iter_mut().zip(&ev) {
                t.step(vars, &grads, lr)?;
            }
            let lv = g.value(logits);
            for (r, &l) in labels.iter().enumerate() {
                correct += usize::from(argmax(lv.row(r)) == l);
            }
            seen += labels.len();
            loss_sum += g.value(loss).item();
            n_batches += 1;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n_batches as f64,
            lr,
            train_accuracy: Some(correct as f64 / seen as f64),
            skipped_anchors: 0,
            mean_positive_similarity: None,
        };
        log::info!("stage2 fold {fold} epoch {epoch}: loss {:.5} acc {:.3}", record.loss, correct as f64 / seen as f64);
        if !record.loss.is_finite() {
            return Err(Error::Numeric(format!("stage-2 loss diverged at epoch {epoch}")));
        }
        let keep_going = conv.observe(epoch, record.loss);
        log.records.push(record);
        if !keep_going {
            break;
        }
    }
    log.converged_at = conv.converged_at;
    for ((_, e), t) in model.branches.iter_mut().zip(encoders) {
        e.params = t.params;
    }
    model.head.params = head.params;
    Ok(Stage2Outcome { model, log })
}

/// `(grades, argmax predictions)` over `cases`.
pub fn predict_cases(model: &FusedModel, data: &Dataset, cases: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let branches = model.branch_names();
    let mut labels = Vec::with_capacity(cases.len());
    let mut preds = Vec::with_capacity(cases.len());
    for &i in cases {
        let s = data.samples.get(i).ok_or_else(|| Error::InvalidArgument(format!("case index {i} out of range")))?;
        labels.push(s.grade);
        preds.push(model.predict(&sample_images(data, i, &branches)).stage("evaluate")?);
    }
    Ok((labels, preds))
}

/// Argmax predictions over `cases` scored against their grades.
pub fn evaluate(model: &FusedModel, data: &Dataset, cases: &[usize], config_hash: &str) -> Result<Metrics> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let (labels, preds) = predict_cases(model, data, cases)?;
    Metrics::from_predictions(&labels, &preds, config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::EncoderConfig;
    use crate::harness::DatasetSpec;

    fn tiny() -> (Dataset, TrainConfig, TrainConfig) {
        let mut spec = DatasetSpec { class_counts: [3, 3, 2], folds: 2, ..Default::default() };
        spec.phantom.dims = [4, 64, 32];
        spec.phantom.fundus_size = 32;
        spec.thickness.output_size = 32;
        let data = Dataset::synthesize(&spec, 16, 16).unwrap();
        let enc = EncoderConfig { input_size: 16, channels: vec![2, 4], feature_width: 6, ..EncoderConfig::default() };
        let s1 = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            fundus_size: 16,
            thickness_size: 16,
            encoder: enc,
            ..TrainConfig::stage1(5)
        };
        let s2 = TrainConfig { stage: Stage::Stage2, lr0: 2e-3, schedule: Schedule::Constant, ..s1.clone() };
        (data, s1, s2)
    }

    #[test]
    fn convergence_rule() {
        let cfg = TrainConfig { patience: 2, tail_epochs: 3, smoothing: 1, ..TrainConfig::stage1(0) };
        let mut c = Convergence::new(&cfg);
        let losses = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        let ran: Vec<bool> = losses.iter().enumerate().map(|(e, &l)| c.observe(e, l)).collect();
        assert_eq!(c.converged_at, Some(3));
        assert_eq!(ran, vec![true, true, true, true, true, true, false, false]);
        let cfg0 = TrainConfig { tail_epochs: 0, ..cfg };
        let mut c = Convergence::new(&cfg0);
        assert!(c.observe(0, 1.0) && c.observe(1, 1.0));
        assert!(!c.observe(2, 1.0));
    }

    #[test]
    fn stage1_is_deterministic() {
        let (data, s1, _) = tiny();
        let cases: Vec<usize> = (0..data.len()).collect();
        let a = train_stage1(&data, &cases, Branch::Thickness, &s1, 0).unwrap();
        let b = train_stage1(&data, &cases, Branch::Thickness, &s1, 0).unwrap();
        let (ca, cb) = (a.checkpoint(&s1, 0).unwrap(), b.checkpoint(&s1, 0).unwrap());
        assert_eq!(ca.to_bytes().unwrap(), cb.to_bytes().unwrap());
        assert_eq!(a.log.records.len(), 2);
        assert!(train_stage1(&data, &cases[..1], Branch::Thickness, &s1, 0).is_err());
        let bad = TrainConfig { batch_size: 1, ..s1 };
        assert!(train_stage1(&data, &cases, Branch::Thickness, &bad, 0).is_err());
    }

    #[test]
    fn stage2_freeze_flag_matters() {
        let (data, s1, s2) = tiny();
        let cases: Vec<usize> = (0..data.len()).collect();
        let pre: Vec<Stage1Model> = Branch::ALL
            .iter()
            .map(|&b| train_stage1(&data, &cases, b, &s1, 0).unwrap().model)
            .collect();
        let tuned = train_stage2(&data, &cases, Stage2Init::Pretrained(pre.clone()), &s2, 0).unwrap();
        let frozen_cfg = TrainConfig { freeze_backbones: true, ..s2.clone() };
        let frozen = train_stage2(&data, &cases, Stage2Init::Pretrained(pre.clone()), &frozen_cfg, 0).unwrap();
        assert_ne!(tuned.model, frozen.model);
        assert_eq!(frozen.model.branches[0].1, pre[0].encoder);
        let m = evaluate(&tuned.model, &data, &cases, "x").unwrap();
        assert_eq!(m.confusion.iter().flatten().sum::<u64>(), 8);
        assert!(evaluate(&tuned.model, &data, &[], "x").is_err());

        let other = TrainConfig { encoder: EncoderConfig { feature_width: 7, ..s2.encoder.clone() }, ..s2 };
        assert!(matches!(
            train_stage2(&data, &cases, Stage2Init::Pretrained(pre), &other, 0),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn csv_log_layout() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 0,
                loss: 1.5,
                lr: 0.001,
                train_accuracy: None,
                skipped_anchors: 0,
                mean_positive_similarity: Some(0.25),
            }],
            converged_at: None,
        };
        assert_eq!(
            log.to_csv(),
            "epoch,loss,lr,train_accuracy,skipped_anchors,mean_positive_similarity\n0,1.5,0.001,,0,0.25\n"
        );
    }
}
