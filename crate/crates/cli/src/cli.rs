//! Subcommand definitions and dispatch.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use atelier_core::analysis::{gradient_samples, luminance_gradient_pca, save_png, DEFAULT_PALETTE_SIZE};
use atelier_core::dataset::{augment_training_set, ingest_and_split, load_rgb, AugmentPolicy, Partition, SplitManifest};
use atelier_core::head::{extract_features, train_head, FeatureTable, HeadWeights, Hyperparams};
use atelier_core::metrics::{confusion_matrix, EvaluationReport};
use atelier_core::model::synthetic::synthetic_archive;
use atelier_core::model::{build_model, Tap};
use atelier_core::retrieval::build_index;
use atelier_core::weights::{read_archive, verify, SlotStatus};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ServiceConfig, CONFIG_ENV};
use crate::engine::Engine;
use crate::error::{CliError, Result};
use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "atelier", version, about = "Fine-art style classification and retrieval")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a `root/<class>/<image>` corpus into train and validation sets.
    Ingest(IngestArgs),
    /// Embed every manifest image at a feature tap.
    Extract(ExtractArgs),
    /// Fit the classification head on a feature table.
    TrainHead(TrainArgs),
    /// Per-class precision, recall and F1 with the confusion matrix.
    Evaluate(EvaluateArgs),
    /// Top-k style predictions for one image.
    Classify(ClassifyArgs),
    /// Grad-CAM overlay for one image.
    Gradcam(GradcamArgs),
    /// Dominant colour palette of one image.
    Palette(PaletteArgs),
    /// PCA of the luminance-gradient field of one image.
    Pca(PcaArgs),
    /// Build a retrieval index from a feature table.
    IndexBuild(IndexBuildArgs),
    /// Nearest works to an image or an indexed id.
    Search(SearchArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Check a weight archive against the network's slot manifest.
    Verify(VerifyArgs),
    /// Write a deterministic synthetic weight archive.
    SynthWeights(SynthArgs),
}

/// Artifact locations; flags override the `--config` file (or `ATELIER_CONFIG`).
#[derive(Debug, Args, Default)]
pub struct Artifacts {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
}

impl Artifacts {
    pub fn resolve(&self) -> Result<ServiceConfig> {
        let mut cfg = match &self.config {
            Some(p) => ServiceConfig::load(p)?,
            None => ServiceConfig::from_env()?,
        };
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.weights, &self.weights);
        set(&mut cfg.head, &self.head);
        set(&mut cfg.index, &self.index);
        set(&mut cfg.classes, &self.classes);
        set(&mut cfg.images, &self.images);
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Write five augmented variants of every training image here and list them in the manifest.
    #[arg(long)]
    pub augment_out: Option<PathBuf>,
    /// Augmentation policy JSON (defaults apply to missing fields).
    #[arg(long, requires = "augment_out")]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TapArg {
    Stage1,
    Stage2,
    Stage3,
    Stage4,
    Pooled,
}

impl From<TapArg> for Tap {
    fn from(t: TapArg) -> Self {
        match t {
            TapArg::Stage1 => Tap::Stage1,
            TapArg::Stage2 => Tap::Stage2,
            TapArg::Stage3 => Tap::Stage3,
            TapArg::Stage4 => Tap::Stage4,
            TapArg::Pooled => Tap::Pooled,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory the manifest paths are relative to.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value = "pooled")]
    pub tap: TapArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// First (1-based) epoch trained at the decayed rate.
    #[arg(long, default_value_t = 15)]
    pub decay_epoch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement (0 = never).
    #[arg(long, default_value_t = 0)]
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PartitionArg {
    Train,
    Val,
}

impl From<PartitionArg> for Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Partition::Train,
            PartitionArg::Val => Partition::Val,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON object mapping manifest path to predicted class (name or index).
    #[arg(long, requires = "manifest", conflicts_with_all = ["features", "head"])]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "head")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub head: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    pub partition: PartitionArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub artifacts: Artifacts,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Class index to explain; defaults to the top prediction.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub artifacts: Artifacts,
}

#[derive(Debug, Args)]
pub struct PaletteArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PALETTE_SIZE)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Write the projected gradient cloud as `pc1,pc2` CSV.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, conflicts_with = "id", required_unless_present = "id")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value_t = server::DEFAULT_SEARCH_K)]
    pub k: usize,
    #[command(flatten)]
    pub artifacts: Artifacts,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `bind` from the config.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    #[command(flatten)]
    pub artifacts: Artifacts,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = atelier_core::model::IMAGENET_CLASSES)]
    pub num_classes: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = atelier_core::model::IMAGENET_CLASSES)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serialises")
}

fn check_k(k: usize, max: usize) -> Result<()> {
    if k == 0 || k > max {
        return Err(CliError::Usage(format!("--k must be between 1 and {max}, got {k}")));
    }
    Ok(())
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_with(argv, &mut stdout.lock())
}

/// As [`run`], writing command output to `out`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).try_init();
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a, out),
        Command::Extract(a) => {
            let manifest = SplitManifest::read(&a.manifest)?;
            let archive = read_archive(&a.weights).map_err(atelier_core::Error::from)?;
            let model = build_model(manifest.classes.len(), &archive)?;
            let table = extract_features(&model, &manifest, &a.root, a.tap.into())?;
            table.save(&a.out)?;
            emit(
                out,
                &to_json(&json!({ "rows": table.len(), "dim": table.dim, "tap": table.tap.name(), "skipped": table.skipped })),
            )
        }
        Command::TrainHead(a) => {
            let table = FeatureTable::load(&a.features)?;
            let hp = Hyperparams {
                learning_rate: a.lr,
                momentum: a.momentum,
                batch_size: a.batch_size,
                epochs: a.epochs,
                decay_epoch: a.decay_epoch,
                decay_factor: a.decay_factor,
                seed: a.seed,
                patience: a.patience,
            };
            let head = train_head(&table, &hp)?;
            head.save(&a.out)?;
            emit(out, &to_json(&json!({ "best_epoch": head.best_epoch, "history": head.history })))
        }
        Command::Evaluate(a) => evaluate(a, out),
        Command::Classify(a) => {
            let engine = Engine::load(&a.artifacts.resolve()?)?;
            check_k(a.k, engine.classes().len())?;
            let report = engine.classify(&load_rgb(&a.image)?, a.k)?;
            emit(out, &to_json(&report))
        }
        Command::Gradcam(a) => {
            let engine = Engine::load(&a.artifacts.resolve()?)?;
            let (overlay, class) = engine.gradcam(&load_rgb(&a.image)?, a.class)?;
            save_png(&overlay, &a.out)?;
            emit(
                out,
                &to_json(&json!({ "class_index": class, "class": engine.classes()[class], "overlay": a.out })),
            )
        }
        Command::Palette(a) => {
            let palette = atelier_core::analysis::dominant_palette(&load_rgb(&a.image)?, a.k, a.seed)?;
            emit(out, &to_json(&palette))
        }
        Command::Pca(a) => {
            let image = load_rgb(&a.image)?;
            let pca = luminance_gradient_pca(&image)?;
            if let Some(path) = &a.scatter {
                let csv = pca.scatter_csv(&gradient_samples(&image)?);
                std::fs::write(path, csv).map_err(|e| CliError::io(path, e))?;
            }
            emit(out, &to_json(&pca))
        }
        Command::IndexBuild(a) => {
            let index = build_index(&FeatureTable::load(&a.features)?)?;
            index.save(&a.out)?;
            emit(out, &to_json(&json!({ "entries": index.len(), "dim": index.dim(), "tap": index.tap().name() })))
        }
        Command::Search(a) => {
            if a.k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            let engine = Engine::load(&a.artifacts.resolve()?)?;
            let report = match (&a.image, &a.id) {
                (Some(path), _) => engine.search_image(&load_rgb(path)?, a.k)?,
                (None, Some(id)) => engine.search_id(id, a.k)?,
                (None, None) => unreachable!("clap requires --image or --id"),
            };
            emit(out, &to_json(&report))
        }
        Command::Serve(a) => serve(a),
        Command::Verify(a) => {
            let archive = read_archive(&a.weights).map_err(atelier_core::Error::from)?;
            let model = build_model(a.num_classes, &synthetic_archive(a.num_classes, 0))?;
            let report = verify(&archive, &model.manifest());
            let problems: Vec<Value> = report
                .slots
                .iter()
                .filter_map(|(name, status)| match status {
                    SlotStatus::Present => None,
                    SlotStatus::Missing => Some(json!({ "slot": name, "status": "missing" })),
                    SlotStatus::ShapeMismatch { expected, actual } => {
                        Some(json!({ "slot": name, "status": "shape", "expected": expected, "actual": actual }))
                    }
                })
                .collect();
            let pass = report.pass;
            emit(
                out,
                &to_json(&json!({
                    "pass": pass,
                    "slots": report.slots.len(),
                    "digest": format!("{:08x}", archive.digest()),
                    "problems": problems,
                    "unexpected": report.unexpected,
                })),
            )?;
            if pass {
                Ok(())
            } else {
                Err(CliError::InvalidConfig(format!("{} does not match the network", a.weights.display())))
            }
        }
        Command::SynthWeights(a) => {
            let archive = synthetic_archive(a.num_classes, a.seed);
            archive.write(&a.out).map_err(atelier_core::Error::from)?;
            emit(out, &to_json(&json!({ "entries": archive.len(), "digest": format!("{:08x}", archive.digest()) })))
        }
    }
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let mut manifest = ingest_and_split(&a.root, a.seed)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let original = manifest.entries.len();
    if let Some(dir) = &a.augment_out {
        let policy = match &a.policy {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str::<AugmentPolicy>(&text).map_err(|source| CliError::Json {
                    context: format!("policy {}", p.display()),
                    source,
                })?
            }
            None => AugmentPolicy {
                rng_seed: a.seed,
                ..AugmentPolicy::default()
            },
        };
        manifest = augment_training_set(&manifest, &a.root, &policy, dir)?;
    }
    manifest.write(&a.out)?;
    let counts = manifest.counts();
    emit(
        out,
        &to_json(&json!({
            "classes": manifest.classes.len(),
            "train": counts.iter().map(|c| c.0).sum::<usize>(),
            "val": counts.iter().map(|c| c.1).sum::<usize>(),
            "augmented": manifest.entries.len() - original,
            "warnings": manifest.warnings,
        })),
    )
}

/// Predicted class from a JSON value: a class name or an index.
fn class_of(v: &Value, classes: &[String], path: &str) -> Result<usize> {
    let found = match v {
        Value::String(name) => classes.iter().position(|c| c == name),
        Value::Number(n) => n.as_u64().map(|i| i as usize).filter(|&i| i < classes.len()),
        _ => None,
    };
    found.ok_or_else(|| CliError::Usage(format!("prediction for `{path}` is not a known class: {v}")))
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let partition = Partition::from(a.partition);
    let (classes, preds, labels) = match (&a.preds, &a.manifest, &a.features, &a.head) {
        (Some(preds_path), Some(manifest_path), None, None) => {
            let manifest = SplitManifest::read(manifest_path)?;
            let text = std::fs::read_to_string(preds_path).map_err(|e| CliError::io(preds_path, e))?;
            let map: HashMap<String, Value> = serde_json::from_str(&text).map_err(|source| CliError::Json {
                context: format!("predictions {}", preds_path.display()),
                source,
            })?;
            let (mut preds, mut labels) = (Vec::new(), Vec::new());
            for e in manifest.partition(partition) {
                let v = map
                    .get(&e.path)
                    .ok_or_else(|| CliError::Usage(format!("no prediction for `{}`", e.path)))?;
                preds.push(class_of(v, &manifest.classes, &e.path)?);
                labels.push(e.class_index);
            }
            (manifest.classes, preds, labels)
        }
        (None, None, Some(features), Some(head)) => {
            let table = FeatureTable::load(features)?;
            let head = HeadWeights::load(head)?;
            let rows: Vec<_> = table.partition(partition).collect();
            let preds = rows.iter().map(|r| head.predict(&r.embedding)).collect();
            let labels = rows.iter().map(|r| r.class_index).collect();
            (table.class_names.clone(), preds, labels)
        }
        _ => {
            return Err(CliError::Usage(
                "evaluate needs either --preds with --manifest, or --features with --head".into(),
            ))
        }
    };
    if labels.is_empty() {
        return Err(CliError::Usage(format!("the {} partition is empty", partition.as_str())));
    }
    let mut m = confusion_matrix(&preds, &labels, classes.len())?;
    m.classes = classes;
    let report = EvaluationReport::new(&m).to_json();
    match &a.out {
        Some(path) => write_file(path, &report),
        None => emit(out, &report),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n")).map_err(|e| CliError::io(path, e))
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = a.artifacts.resolve()?;
    if let Some(bind) = a.bind {
        cfg.bind = bind;
    }
    if cfg.weights.is_none() {
        return Err(CliError::Usage(format!(
            "no weights configured; pass --weights or --config, or set {CONFIG_ENV}"
        )));
    }
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = cfg.workers {
        builder.worker_threads(n);
    }
    let runtime = builder
        .enable_all()
        .build()
        .map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(server::serve(AppState::new(cfg)))
}
