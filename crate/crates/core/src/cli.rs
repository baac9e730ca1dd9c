//! Command-line surface: train, eval, predict, gradcheck, synth, ablate.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config/data
//! error, 3 numerical abort.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_tensor;
use crate::checkpoint;
use crate::data::{
    generate_synthetic, load_folder_dataset, load_manifest_dataset, read_image, split_dataset, stack_images,
    write_folder_dataset, Dataset, SynthConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckOptions};
use crate::metrics::MetricsReport;
use crate::model::{argmax_rows, ModelConfig, SCKansformer, Variant};
use crate::rng::substream;
use crate::train::{evaluate, fit, prepare_eval, TrainConfig, TrainReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Class-per-folder image tree.
    pub root: Option<PathBuf>,
    /// Optional `path<TAB>class` listing relative to `root`.
    pub manifest: Option<PathBuf>,
    /// Separate test tree; without it `root` is split by `split_ratio`.
    pub test_root: Option<PathBuf>,
    /// Generate data in memory instead of reading `root`.
    pub synthetic: Option<SynthConfig>,
    pub split_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            manifest: None,
            test_root: None,
            synthetic: None,
            split_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    /// Parses JSON, rejecting unknown keys; errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) {
            return Err(Error::Config(format!("data.split_ratio must lie in (0, 1), got {}", d.split_ratio)));
        }
        match (&d.root, &d.synthetic) {
            (None, None) => Err(Error::Config("data.root: no dataset given (set data.root or data.synthetic)".into())),
            (Some(_), Some(_)) => Err(Error::Config("data.root and data.synthetic are mutually exclusive".into())),
            (Some(root), None) => {
                if !root.is_dir() {
                    return Err(Error::Config(format!("data.root: {} is not a directory", root.display())));
                }
                if let Some(t) = &d.test_root {
                    if !t.is_dir() {
                        return Err(Error::Config(format!("data.test_root: {} is not a directory", t.display())));
                    }
                }
                Ok(())
            }
            (None, Some(s)) => s.validate(),
        }
    }
}

/// Train/test datasets described by `cfg`, split with the run seed.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let full = match (&d.synthetic, &d.root) {
        (Some(s), _) => generate_synthetic(s)?,
        (None, Some(root)) => {
            let (ds, report) = match &d.manifest {
                Some(m) => load_manifest_dataset(root, m)?,
                None => load_folder_dataset(root)?,
            };
            if !report.skipped.is_empty() {
                log::warn!("skipped {} unreadable files under {}", report.skipped.len(), root.display());
            }
            ds
        }
        (None, None) => return Err(Error::Config("data.root: no dataset given".into())),
    };
    if let Some(test_root) = &d.test_root {
        let (test, _) = load_folder_dataset(test_root)?;
        if test.class_names != full.class_names {
            return Err(Error::Data(format!(
                "class folders of {} differ from the training classes",
                test_root.display()
            )));
        }
        return Ok((full, test));
    }
    let (train, test, report) = split_dataset(&full, d.split_ratio, cfg.train.seed)?;
    for c in report.singleton_classes {
        log::warn!("class {} has a single sample; it goes to train only", full.class_names[c]);
    }
    Ok((train, test))
}

/// Builds a freshly initialized model sized for `num_classes`.
pub fn build_model(cfg: &ModelConfig, num_classes: usize, seed: u64) -> Result<SCKansformer> {
    let mut mc = cfg.clone();
    if mc.num_classes != num_classes {
        log::info!("model.num_classes set to {num_classes} from the dataset");
        mc.num_classes = num_classes;
    }
    SCKansformer::new(&mc, &mut substream(seed, "init"))
}

/// Full training run; writes the run config, log, checkpoint and metrics
/// under `cfg.output_dir`.
pub fn train_run(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let mut model = build_model(&cfg.model, train.num_classes(), cfg.train.seed)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p = out.join("run_config.json");
    fs::write(&p, cfg.to_json()?).map_err(|e| Error::io(&p, e))?;
    fit(&mut model, &train, Some(&test), &cfg.train, Some(out))
}

/// Evaluates a checkpoint on a class-per-folder tree.
pub fn eval_run(ckpt: &Path, data: &Path, manifest: Option<&Path>) -> Result<MetricsReport> {
    let (model, meta) = checkpoint::load(ckpt)?;
    let (ds, _) = match manifest {
        Some(m) => load_manifest_dataset(data, m)?,
        None => load_folder_dataset(data)?,
    };
    if ds.class_names != meta.class_names {
        return Err(Error::Data(format!(
            "classes in {} ({}) do not match the checkpoint ({})",
            data.display(),
            ds.class_names.join(","),
            meta.class_names.join(",")
        )));
    }
    let images = prepare_eval(&ds, &meta.preprocess, &meta.normalizer)?;
    evaluate(&model, &images, &ds.labels(), &ds.class_names, 64)
}

/// One prediction per image: (class name, probability).
pub fn predict_run(ckpt: &Path, images: &[PathBuf]) -> Result<Vec<(String, f64)>> {
    let (model, meta) = checkpoint::load(ckpt)?;
    let mut batch = Vec::with_capacity(images.len());
    for p in images {
        let img = meta.preprocess.preprocess_eval(&read_image(p)?)?;
        batch.push(meta.normalizer.apply(&img));
    }
    let logits = model.logits(&stack_images(&batch)?)?;
    let probs = softmax_tensor(&logits, 1);
    let k = logits.shape()[1];
    Ok(argmax_rows(&logits)
        .into_iter()
        .enumerate()
        .map(|(i, c)| (meta.class_names[c].clone(), probs.data()[i * k + c]))
        .collect())
}

/// Metrics of one ablation variant on the shared test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,precision,recall,f1,accuracy\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.variant, r.precision, r.recall, r.f1, r.accuracy
            ));
        }
        s
    }
}

/// Trains the full model and each single-module-removed variant on the same
/// seeded split and reports the test metrics of each.
pub fn ablate_run(cfg: &RunConfig) -> Result<AblationTable> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let mut rows = Vec::new();
    for v in Variant::ALL {
        log::info!("ablation variant: {}", v.label());
        let mut model = build_model(&cfg.model.variant(v), train.num_classes(), cfg.train.seed)?;
        let report = fit(&mut model, &train, Some(&test), &cfg.train, None)?;
        let best = &report.best;
        rows.push(AblationRow {
            variant: v.label().to_string(),
            precision: best.macro_precision,
            recall: best.macro_recall,
            f1: best.macro_f1,
            accuracy: best.accuracy,
        });
    }
    let table = AblationTable { rows };
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p = out.join("ablation.csv");
    fs::write(&p, table.to_csv()).map_err(|e| Error::io(&p, e))?;
    Ok(table)
}

#[derive(Debug, Parser)]
#[command(name = "sckansformer", version, about = "Cell image classifier: train, evaluate and verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a class-per-folder tree.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory for metrics.json, confusion.csv and confusion.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify individual images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// `all` or one of autodiff, kan, attention, glae, scconv, model.
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic class-per-folder PNG dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        per_class: usize,
        #[arg(long, default_value_t = 40)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-class counts, e.g. 64,32,16,8; overrides --classes/--per-class.
        #[arg(long, value_delimiter = ',')]
        longtail: Option<Vec<usize>>,
    },
    /// Train the full model and each ablation variant; print a CSV table.
    Ablate(TrainArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

impl TrainArgs {
    /// Reads the config file and applies flag overrides, flags winning.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            if let Some(syn) = cfg.data.synthetic.as_mut() {
                syn.seed = s;
            }
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr_max = lr;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(r) = &self.data_root {
            cfg.data.root = Some(r.clone());
            cfg.data.synthetic = None;
        }
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn report(res: Result<i32>) -> i32 {
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    report(match cli.command {
        Command::Train(args) => args.resolve().and_then(|cfg| {
            let r = train_run(&cfg)?;
            let best = &r.best;
            println!(
                "best epoch {}: accuracy {:.4} macro-F1 {:.4}; artifacts in {}",
                r.best_epoch,
                best.accuracy,
                best.macro_f1,
                cfg.output_dir.display()
            );
            Ok(EXIT_OK)
        }),
        Command::Eval {
            checkpoint,
            data,
            manifest,
            out,
        } => eval_run(&checkpoint, &data, manifest.as_deref()).and_then(|r| {
            if let Some(dir) = out {
                r.write_all(&dir)?;
            }
            println!("{}", r.to_json()?);
            Ok(EXIT_OK)
        }),
        Command::Predict { checkpoint, images } => predict_run(&checkpoint, &images).map(|preds| {
            for (p, (class, prob)) in images.iter().zip(preds) {
                println!("{}\t{class}\t{prob:.4}", p.display());
            }
            EXIT_OK
        }),
        Command::Gradcheck {
            scope,
            seeds,
            tolerance,
            inject_fault,
        } => {
            let opts = GradcheckOptions {
                seeds,
                tolerance,
                inject_fault,
                ..GradcheckOptions::default()
            };
            gradcheck::run(&scope, &opts).map(|r| {
                print!("{}", r.render());
                if let Some(w) = r.worst() {
                    println!("worst: {}/{} {:.3e}", w.module, w.case, w.max_rel_err);
                }
                if r.passed() {
                    println!("gradcheck passed ({} cases, tolerance {:e})", r.cases.len(), tolerance);
                    EXIT_OK
                } else {
                    for c in r.cases.iter().filter(|c| !c.passed(tolerance)) {
                        eprintln!("FAILED {}/{}: max rel err {:.3e}", c.module, c.case, c.max_rel_err);
                    }
                    EXIT_VERIFY
                }
            })
        }
        Command::Synth {
            out,
            classes,
            per_class,
            size,
            seed,
            longtail,
        } => {
            let cfg = SynthConfig {
                num_classes: longtail.as_ref().map_or(classes, |l| l.len()),
                samples_per_class: per_class,
                image_size: size,
                seed,
                longtail,
            };
            generate_synthetic(&cfg).and_then(|ds| {
                write_folder_dataset(&ds, &out)?;
                println!("wrote {} images in {} classes to {}", ds.len(), ds.num_classes(), out.display());
                Ok(EXIT_OK)
            })
        }
        Command::Ablate(args) => args.resolve().and_then(|cfg| {
            print!("{}", ablate_run(&cfg)?.to_csv());
            Ok(EXIT_OK)
        }),
    })
}

/// Parses `args` (including the program name) and executes them.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
