use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use corolla::fusion::{FusedModel, Stage1Model};
use corolla::harness::{
    config_hash, crossval, evaluate, load_config_over, split, synth_dataset, train_stage1, train_stage2,
    CrossValConfig, Dataset, DatasetSpec, Metrics, Stage2Init, TrainConfig, ALL_CASES,
};
use corolla::numcore::Checkpoint;
use corolla::segmentation::{segment_layers, write_surfaces, SegmentationConfig};
use corolla::supcon::Branch;
use corolla::thickness::{generate_thickness_map, ThicknessConfig};
use corolla::volume::load_volume;

#[derive(Parser)]
#[command(name = "corolla", version, about = "Glaucoma grading from synthetic OCT volumes and fundus images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset: images, optional volumes and a manifest.
    Synth(SynthArgs),
    /// Segment the retinal surfaces of one volume into CSV files.
    Segment(SegmentArgs),
    /// Render the colored thickness map of one volume.
    Thickness(ThicknessArgs),
    /// Contrastive pretraining of one encoder branch.
    TrainStage1(Stage1Args),
    /// Classifier training from pretrained or freshly initialized encoders.
    TrainStage2(Stage2Args),
    /// Cross-validate every variant of the ablation grid.
    Crossval(CrossvalArgs),
    /// Score a classifier checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cases per grade, e.g. `12,6,6`.
    #[arg(long, value_delimiter = ',')]
    class_counts: Option<Vec<usize>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    save_volumes: bool,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for `surface_<k>.csv` and `surfaces.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ThicknessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// PNG path; the JSON sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hold out this fold; without it every case is used for training.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct Stage1Args {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum)]
    branch: BranchArg,
}

#[derive(Args)]
struct Stage2Args {
    #[command(flatten)]
    train: TrainArgs,
    /// Stage-1 checkpoints whose encoders initialize the classifier.
    #[arg(long, conflicts_with = "branches")]
    pretrained: Vec<PathBuf>,
    /// Branches to train from scratch when no checkpoint is given.
    #[arg(long, value_enum, value_delimiter = ',')]
    branches: Vec<BranchArg>,
    #[arg(long)]
    freeze: bool,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Epoch cap for both stages.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Score only this fold.
    #[arg(long)]
    fold: Option<usize>,
    /// Metrics JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum BranchArg {
    Fundus,
    Thickness,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Branch {
        match b {
            BranchArg::Fundus => Branch::Fundus,
            BranchArg::Thickness => Branch::Thickness,
        }
    }
}

fn layered<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => load_config_over(&base, p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(base),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train_config(base: TrainConfig, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = layered(base, args.config.as_deref())?;
    cfg.seed = args.seed;
    if let Some(e) = args.epochs {
        cfg.max_epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.lr0 = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Training cases, held-out cases and the fold tag of the run.
fn partition(data: &Dataset, fold: Option<usize>) -> Result<(Vec<usize>, Vec<usize>, u64)> {
    match fold {
        Some(f) if f >= data.num_folds => bail!("fold {f} out of range for {} folds", data.num_folds),
        Some(f) => {
            let (train, val) = split(&data.folds, f);
            Ok((train, val, f as u64))
        }
        None => Ok(((0..data.len()).collect(), Vec::new(), ALL_CASES)),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = layered(DatasetSpec::default(), args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(c) = args.class_counts {
        spec.class_counts = c.try_into().map_err(|_| anyhow::anyhow!("--class-counts takes one count per grade"))?;
    }
    if let Some(k) = args.folds {
        spec.folds = k;
    }
    spec.save_volumes |= args.save_volumes;
    let manifest = synth_dataset(&spec, &args.out)?;
    info!("wrote {} cases to {}", manifest.cases.len(), args.out.display());
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let cfg = layered(SegmentationConfig::default(), args.config.as_deref())?;
    let vol = load_volume(&args.input)?;
    let surfaces = segment_layers(&vol, &cfg)?;
    write_surfaces(&surfaces, Some(&cfg), &args.out)?;
    Ok(())
}

fn thickness(args: ThicknessArgs) -> Result<()> {
    let cfg = layered(ThicknessConfig::default(), args.config.as_deref())?;
    let vol = load_volume(&args.input)?;
    let map = generate_thickness_map(&vol, &cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    map.rgb.save_png(&args.out)?;
    write_json(&args.out.with_extension("json"), &map.sidecar(&cfg))?;
    info!("mean thickness {:.3}", map.thickness.mean());
    Ok(())
}

fn train_stage1_cmd(args: Stage1Args) -> Result<()> {
    let cfg = train_config(TrainConfig::stage1(args.train.seed), &args.train)?;
    let data = Dataset::load(&args.train.data, cfg.fundus_size, cfg.thickness_size)?;
    let (train, _, tag) = partition(&data, args.train.fold)?;
    let branch = Branch::from(args.branch);
    let outcome = train_stage1(&data, &train, branch, &cfg, tag)?;
    fs::create_dir_all(&args.train.out)?;
    let name = branch.name();
    outcome.checkpoint(&cfg, tag)?.save(args.train.out.join(format!("stage1_{name}.ckpt")))?;
    fs::write(args.train.out.join(format!("stage1_{name}.csv")), outcome.log.to_csv())?;
    info!("{name}: {} epochs", outcome.log.records.len());
    Ok(())
}

fn train_stage2_cmd(args: Stage2Args) -> Result<()> {
    let mut cfg = train_config(TrainConfig::stage2(args.train.seed), &args.train)?;
    cfg.freeze_backbones |= args.freeze;
    let data = Dataset::load(&args.train.data, cfg.fundus_size, cfg.thickness_size)?;
    let (train, val, tag) = partition(&data, args.train.fold)?;
    let init = if !args.pretrained.is_empty() {
        let models = args
            .pretrained
            .iter()
            .map(|p| Ok(Stage1Model::from_checkpoint(&Checkpoint::load(p)?)?))
            .collect::<Result<Vec<_>>>()?;
        Stage2Init::Pretrained(models)
    } else if !args.branches.is_empty() {
        Stage2Init::Scratch(args.branches.iter().map(|&b| b.into()).collect())
    } else {
        bail!("give --pretrained checkpoints or --branches to train from scratch");
    };
    let outcome = train_stage2(&data, &train, init, &cfg, tag)?;
    let out = &args.train.out;
    fs::create_dir_all(out)?;
    outcome.checkpoint(&cfg, tag)?.save(out.join("stage2.ckpt"))?;
    fs::write(out.join("stage2.csv"), outcome.log.to_csv())?;
    let scored = if val.is_empty() { &train } else { &val };
    let metrics = evaluate(&outcome.model, &data, scored, &config_hash(&cfg)?)?;
    fs::write(out.join("metrics.json"), metrics.to_json()?)?;
    info!("accuracy {:.3}", metrics.accuracy);
    Ok(())
}

fn crossval_cmd(args: CrossvalArgs) -> Result<()> {
    let mut cfg = layered(CrossValConfig::with_seed(args.seed), args.config.as_deref())?;
    cfg.set_seed(args.seed);
    if let Some(e) = args.epochs {
        cfg.stage1.max_epochs = e;
        cfg.stage2.max_epochs = e;
    }
    let data = Dataset::load(&args.data, cfg.stage1.fundus_size, cfg.stage1.thickness_size)?;
    let report = crossval(&data, &cfg, Some(&args.out))?;
    for v in &report.variants {
        info!("{:16} accuracy {:.3}", v.name, v.mean_accuracy);
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let model = FusedModel::from_checkpoint(&ckpt)?;
    let hash = ckpt.meta.get("config_hash").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    let size = model.branches[0].1.config.input_size;
    let data = Dataset::load(&args.data, size, size)?;
    let cases = match args.fold {
        Some(f) => partition(&data, Some(f))?.1,
        None => (0..data.len()).collect(),
    };
    let metrics: Metrics = evaluate(&model, &data, &cases, &hash)?;
    match args.out {
        Some(path) => fs::write(path, metrics.to_json()?)?,
        None => print!("{}", metrics.to_json()?),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Thickness(a) => thickness(a),
        Command::TrainStage1(a) => train_stage1_cmd(a),
        Command::TrainStage2(a) => train_stage2_cmd(a),
        Command::Crossval(a) => crossval_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}
