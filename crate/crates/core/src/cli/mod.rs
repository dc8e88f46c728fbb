//! Command-line front end: `generate`, `train`, `eval`, `bottleneck`,
//! `interpret` and `sweep`.
//!
//! Every command writes `run.json` (the resolved arguments and configuration)
//! into its output directory next to its CSV reports and SVG charts. Exit
//! codes: 0 on success, 1 on runtime failure, 2 on configuration errors.

pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{bottleneck_csv, bottleneck_experiment, evaluate_samples};
use crate::hsdata::io::{read_mask, write_sample};
use crate::hsdata::{generate_synthetic, Dataset, DatasetManifest, GeneratorRecord, ManifestEntry, Sample, Split, SynthConfig};
use crate::interpret::{
    feature_ablation, gradcam, inertia_csv, integrated_gradients, prototype_class_proportions, prototype_inertia_curve,
    prototype_vectors, PixelTarget,
};
use crate::models::{Checkpoint, Model, Variant};
use crate::prototypes::DEFAULT_ACTIVATION_QUANTILE;
use crate::substrate::{cubes_to_tensor, Precision};
use crate::train::{grid_sweep, history_csv, loss_log_csv, parse_document, sweep_csv, train_kfold, TrainConfig};
use plot::Series;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ramanseg", version, about = "Prototype-based segmentation of hyperspectral images", args_override_self = true)]
pub struct Cli {
    /// TOML (or `.json`) file with training settings; a table named after the
    /// subcommand supplies defaults for that subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Writes a synthetic dataset and its patient-grouped manifest.
    Generate {
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Spectral overlap in [0, 1]; 1 makes the classes indistinguishable.
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        /// Train, val and test fractions.
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
        ratios: Vec<f64>,
    },
    /// Trains one model, or one per fold, and writes checkpoints and logs.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        #[arg(long)]
        model: Option<Variant>,
        #[arg(long)]
        folds: Option<usize>,
        /// `name=value` overrides of single configuration fields.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
    },
    /// Segments a split of the manifest and reports Dice, sensitivity and specificity.
    Eval {
        /// Checkpoint files or ensemble descriptors.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Mean Dice of masks reconstructed through a low-resolution bottleneck.
    Bottleneck {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "32,16,8,4")]
        sizes: Vec<usize>,
    },
    /// Attribution maps and prototype diagnostics for trained checkpoints.
    Interpret {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        /// `row,col,class`; repeatable. Defaults to the image centre, class 1.
        #[arg(long)]
        target: Vec<String>,
        /// Sample to explain; defaults to the first test sample.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long, default_value_t = 256)]
        steps: usize,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ACTIVATION_QUANTILE)]
        quantile: f64,
        /// Class whose ground-truth region is ablated.
        #[arg(long, default_value_t = 1)]
        region_class: u8,
        #[arg(long, default_value_t = 0.0)]
        baseline_value: f64,
        /// Scale each Grad-CAM map to a maximum of 1 before averaging.
        #[arg(long)]
        normalize: bool,
    },
    /// Trains one model per value of a configuration field.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        #[serde(skip)]
        out: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        model: Option<Variant>,
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Bottleneck { .. } => "bottleneck",
            Command::Interpret { .. } => "interpret",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Generate { out, .. }
            | Command::Train { out, .. }
            | Command::Eval { out, .. }
            | Command::Bottleneck { out, .. }
            | Command::Interpret { out, .. }
            | Command::Sweep { out, .. } => out,
        }
    }
}

const COMMANDS: [&str; 6] = ["generate", "train", "eval", "bottleneck", "interpret", "sweep"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ProtoProportions,
    Inertia,
    Ig,
    Ablation,
    Gradcam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Written next to fold checkpoints; `eval` and `interpret` accept it in
/// place of a checkpoint list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDescriptor {
    pub variant: Variant,
    /// Checkpoint paths relative to the descriptor.
    pub members: Vec<String>,
    pub val_dice: Vec<f64>,
}

/// Parsed arguments plus the configuration document they point to.
#[derive(Debug)]
pub struct Invocation {
    pub cli: Cli,
    /// Configuration document with the per-command tables removed.
    pub document: Option<Value>,
}

fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_document(&text, json)
}

fn flag_args(table: &serde_json::Map<String, Value>) -> Vec<OsString> {
    let mut args = Vec::new();
    for (k, v) in table {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            Value::Bool(true) => args.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) if k == "set" || k == "target" => {
                for item in items {
                    args.push(flag.clone().into());
                    args.push(scalar_text(item).into());
                }
            }
            Value::Array(items) => {
                args.push(flag.into());
                args.push(items.iter().map(scalar_text).collect::<Vec<_>>().join(",").into());
            }
            other => {
                args.push(flag.into());
                args.push(scalar_text(other).into());
            }
        }
    }
    args
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Failure before a command starts running.
#[derive(Debug)]
pub enum ParseFailure {
    Usage(clap::Error),
    Config(Error),
}

/// Parses `args`; flags missing from the command line are taken from the
/// config file's table named after the subcommand.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Invocation, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let first = Cli::try_parse_from(&args).map_err(ParseFailure::Usage)?;
    let Some(path) = first.config.clone() else {
        return Ok(Invocation {
            cli: first,
            document: None,
        });
    };
    let mut doc = read_document(&path).map_err(ParseFailure::Config)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| ParseFailure::Config(Error::Config("configuration must be a table".into())))?;
    let name = first.command.name();
    let section = obj.get(name).cloned();
    for c in COMMANDS {
        obj.remove(c);
    }
    let Some(section) = section else {
        return Ok(Invocation {
            cli: first,
            document: Some(doc),
        });
    };
    let table = section
        .as_object()
        .ok_or_else(|| ParseFailure::Config(Error::Config(format!("`{name}` must be a table"))))?;
    let at = args.iter().skip(1).position(|a| a == name).map(|i| i + 2).unwrap_or(args.len());
    let mut merged = args[..at].to_vec();
    merged.extend(flag_args(table));
    merged.extend_from_slice(&args[at..]);
    let cli = Cli::try_parse_from(&merged).map_err(ParseFailure::Usage)?;
    Ok(Invocation {
        cli,
        document: Some(doc),
    })
}

/// Parses the process arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match parse_args(args) {
        Ok(inv) => inv,
        Err(ParseFailure::Usage(e)) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let level = match inv.cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_run_json(inv: &Invocation, train: Option<&TrainConfig>, extra: Value) -> Result<()> {
    let mut run = json!({
        "command": inv.cli.command.name(),
        "args": serde_json::to_value(&inv.cli)?,
    });
    if let Some(cfg) = train {
        run["train_config"] = serde_json::to_value(cfg)?;
    }
    if !extra.is_null() {
        run["result"] = extra;
    }
    let mut text = serde_json::to_string_pretty(&run)?;
    text.push('\n');
    write(&inv.cli.command.out().join("run.json"), text)
}

/// Training configuration from the document, `--model`, `--set` and `--seed`.
pub fn resolve_train_config(
    document: Option<&Value>,
    model: Option<Variant>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<TrainConfig> {
    let doc = document.cloned().unwrap_or_else(|| json!({}));
    let mut cfg = TrainConfig::from_value(doc, model)?;
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`{kv}` is not NAME=VALUE")))?;
        cfg.set_param(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads checkpoint files and ensemble descriptors into models.
pub fn load_models(paths: &[PathBuf], precision: Precision) -> Result<Vec<Model>> {
    let mut files = Vec::new();
    for p in paths {
        if p.extension().is_some_and(|e| e == "json") {
            let raw = fs::read(p).map_err(|e| Error::io(p, e))?;
            let desc: EnsembleDescriptor = serde_json::from_slice(&raw)?;
            let root = p.parent().unwrap_or(Path::new("."));
            files.extend(desc.members.iter().map(|m| root.join(m)));
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no checkpoints given".into()));
    }
    let models = files
        .iter()
        .map(|f| Model::from_checkpoint(&Checkpoint::load(f)?, precision))
        .collect::<Result<Vec<_>>>()?;
    let v = models[0].config().variant;
    if models.iter().any(|m| m.config().variant != v) {
        return Err(Error::Config("ensemble members must share a model variant".into()));
    }
    Ok(models)
}

pub fn run(inv: &Invocation) -> Result<()> {
    let out = inv.cli.command.out();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &inv.cli.command {
        Command::Generate {
            out,
            samples,
            size,
            overlap,
            ratios,
        } => cmd_generate(inv, out, *samples, *size, *overlap, ratios),
        Command::Train {
            manifest,
            out,
            model,
            folds,
            set,
        } => cmd_train(inv, manifest, out, *model, *folds, set),
        Command::Eval {
            checkpoints,
            manifest,
            out,
            split,
        } => cmd_eval(inv, checkpoints, manifest, out, (*split).into()),
        Command::Bottleneck { manifest, out, sizes } => cmd_bottleneck(inv, manifest, out, sizes),
        Command::Interpret { .. } => cmd_interpret(inv),
        Command::Sweep {
            manifest,
            out,
            param,
            values,
            model,
            set,
        } => cmd_sweep(inv, manifest, out, param, values, *model, set),
    }
}

fn cmd_generate(inv: &Invocation, out: &Path, n: usize, size: usize, overlap: f64, ratios: &[f64]) -> Result<()> {
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| Error::Config(format!("--ratios needs three values, got {}", ratios.len())))?;
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Config(format!("--overlap {overlap} must lie in [0, 1]")));
    }
    if size < crate::hsdata::synth::MIN_SIZE {
        return Err(Error::Config(format!("--size must be at least {}", crate::hsdata::synth::MIN_SIZE)));
    }
    let seed = inv.cli.seed.unwrap_or(0);
    let synth = SynthConfig {
        overlap,
        ..SynthConfig::default()
    };
    let samples = generate_synthetic(n, size, size, seed, &synth)?;
    let mut entries = Vec::with_capacity(n);
    for s in &samples {
        let (cube, mask) = write_sample(out, s)?;
        entries.push(ManifestEntry {
            sample_id: s.sample_id.clone(),
            patient_id: s.patient_id.clone(),
            cube,
            mask,
            split: Split::Train,
        });
    }
    let mut manifest = if entries.is_empty() {
        DatasetManifest {
            samples: Vec::new(),
            generator: None,
        }
    } else {
        crate::hsdata::split_by_patient(entries, ratios, seed)?
    };
    manifest.generator = Some(GeneratorRecord { seed, config: synth });
    manifest.save(&out.join("manifest.json"))?;
    log::info!("wrote {n} samples to {}", out.display());
    write_run_json(inv, None, json!({ "samples": n }))
}

fn cmd_train(
    inv: &Invocation,
    manifest: &Path,
    out: &Path,
    model: Option<Variant>,
    folds: Option<usize>,
    set: &[String],
) -> Result<()> {
    let mut cfg = resolve_train_config(inv.document.as_ref(), model, set, inv.cli.seed)?;
    if let Some(k) = folds {
        cfg.folds = k;
        cfg.validate()?;
    }
    let data = Dataset::load(manifest, &cfg.preprocess)?;
    let outcomes = match train_kfold(&data, &cfg) {
        Ok(o) => o,
        Err(Error::Diverged {
            step,
            term,
            last_good: Some(ckpt),
        }) => {
            ckpt.save(&out.join("last_good.ckpt"))?;
            return Err(Error::Diverged {
                step,
                term,
                last_good: None,
            });
        }
        Err(e) => return Err(e),
    };
    let mut series = Vec::new();
    let mut members = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        let stem = if outcomes.len() == 1 { "model".to_string() } else { format!("fold_{i}") };
        o.checkpoint(cfg.seed)?.save(&out.join(format!("{stem}.ckpt")))?;
        write(&out.join(format!("{stem}_loss_log.csv")), loss_log_csv(&o.log))?;
        write(&out.join(format!("{stem}_history.csv")), history_csv(&o.history))?;
        series.push(Series {
            name: stem.clone(),
            points: o.log.iter().map(|r| (r.step as f64, r.total)).collect(),
        });
        members.push(format!("{stem}.ckpt"));
    }
    write(&out.join("loss.svg"), plot::line_chart("Training loss", "step", "L", &series))?;
    let val_dice: Vec<f64> = outcomes.iter().map(|o| o.best_val_dice).collect();
    if outcomes.len() > 1 {
        let desc = EnsembleDescriptor {
            variant: cfg.model.variant,
            members,
            val_dice: val_dice.clone(),
        };
        let mut text = serde_json::to_string_pretty(&desc)?;
        text.push('\n');
        write(&out.join("ensemble.json"), text)?;
    }
    let epochs: Vec<usize> = outcomes.iter().map(|o| o.best_epoch).collect();
    write_run_json(inv, Some(&cfg), json!({ "best_val_dice": val_dice, "best_epoch": epochs }))
}

fn cmd_eval(inv: &Invocation, checkpoints: &[PathBuf], manifest: &Path, out: &Path, split: Split) -> Result<()> {
    let cfg = resolve_train_config(inv.document.as_ref(), None, &[], inv.cli.seed)?;
    let models = load_models(checkpoints, Precision::F32)?;
    let data = Dataset::load(manifest, &cfg.preprocess)?;
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(Error::Precondition(format!("manifest has no {split:?} samples")));
    }
    let report = evaluate_samples(&models, &samples, &cfg.inference)?;
    let mut text = report.to_json()?;
    text.push('\n');
    write(&out.join("eval_report.json"), text)?;
    write(&out.join("eval_report.csv"), report.to_csv())?;
    write_run_json(inv, Some(&cfg), json!({ "mean_dice": report.mean_dice() }))
}

fn cmd_bottleneck(inv: &Invocation, manifest_path: &Path, out: &Path, sizes: &[usize]) -> Result<()> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let masks = manifest
        .samples
        .iter()
        .map(|e| read_mask(&root.join(&e.mask)))
        .collect::<Result<Vec<_>>>()?;
    let first = masks
        .first()
        .ok_or_else(|| Error::Precondition("manifest lists no samples".into()))?;
    let dims = (first.height(), first.width());
    let refs: Vec<_> = masks.iter().collect();
    let rows = bottleneck_experiment(&refs, sizes)?;
    write(&out.join("bottleneck.csv"), bottleneck_csv(&rows, dims))?;
    let labels: Vec<String> = rows
        .iter()
        .map(|r| r.size.map_or("baseline".to_string(), |s| format!("{s}x{s}")))
        .collect();
    let values: Vec<f64> = rows.iter().map(|r| r.mean_dice).collect();
    write(&out.join("bottleneck.svg"), plot::bar_chart("Bottleneck reconstruction", "mean Dice", &labels, &values))?;
    write_run_json(inv, None, Value::Null)
}

fn parse_target(s: &str) -> Result<PixelTarget> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("target `{s}` is not row,col,class")))?;
    match nums[..] {
        [row, col, class] => Ok(PixelTarget { row, col, class }),
        _ => Err(Error::Config(format!("target `{s}` is not row,col,class"))),
    }
}

fn pick_sample<'a>(data: &'a Dataset, id: Option<&str>) -> Result<&'a Sample> {
    match id {
        Some(id) => data
            .samples
            .iter()
            .find(|s| s.sample_id == id)
            .ok_or_else(|| Error::Config(format!("no sample `{id}` in the manifest"))),
        None => data
            .split(Split::Test)
            .first()
            .copied()
            .or(data.samples.first())
            .ok_or_else(|| Error::Precondition("manifest lists no samples".into())),
    }
}

fn cmd_interpret(inv: &Invocation) -> Result<()> {
    let Command::Interpret {
        method,
        checkpoints,
        manifest,
        out,
        target,
        sample,
        steps,
        k_max,
        layer,
        quantile,
        region_class,
        baseline_value,
        normalize,
    } = &inv.cli.command
    else {
        unreachable!()
    };
    let cfg = resolve_train_config(inv.document.as_ref(), None, &[], inv.cli.seed)?;
    let precision = if *method == Method::Ig { Precision::F64 } else { Precision::F32 };
    let models = load_models(checkpoints, precision)?;
    let model = &models[0];
    let data = Dataset::load(manifest, &cfg.preprocess)?;
    let targets = |s: &Sample| -> Result<Vec<PixelTarget>> {
        if target.is_empty() {
            Ok(vec![PixelTarget {
                row: s.mask.height() / 2,
                col: s.mask.width() / 2,
                class: 1,
            }])
        } else {
            target.iter().map(|t| parse_target(t)).collect()
        }
    };
    let result = match method {
        Method::ProtoProportions => {
            let audit = prototype_class_proportions(model, &data.split(Split::Train), *quantile)?;
            write(&out.join("proto_proportions.csv"), audit.to_csv())?;
            let labels: Vec<String> = audit.rows.iter().map(|r| r.prototype_id.to_string()).collect();
            let rows: Vec<Vec<f64>> = audit.rows.iter().map(|r| r.proportions.clone()).collect();
            let legend: Vec<String> = (0..model.config().num_classes).map(|c| format!("class {c}")).collect();
            write(
                &out.join("proto_proportions.svg"),
                plot::stacked_bars("Prototype region class proportions", &labels, &rows, &legend),
            )?;
            json!({ "majority_own_class": audit.majority_own_class, "flagged_classes": audit.flagged_classes })
        }
        Method::Inertia => {
            let vectors = prototype_vectors(model)?;
            let k = k_max.unwrap_or(vectors.len());
            let curve = prototype_inertia_curve(&vectors, k, cfg.seed)?;
            write(&out.join("inertia.csv"), inertia_csv(&curve))?;
            let series = [Series {
                name: "inertia".into(),
                points: curve.iter().map(|p| (p.k as f64, p.inertia)).collect(),
            }];
            write(&out.join("inertia.svg"), plot::line_chart("k-means inertia of prototypes", "k", "inertia", &series))?;
            Value::Null
        }
        Method::Ig => {
            let s = pick_sample(&data, sample.as_deref())?;
            let x = cubes_to_tensor(&[&s.cube], precision)?;
            let mut csv = String::from("target,row,col,class,channel,attribution\n");
            let mut errors = Vec::new();
            let mut mean = vec![0.0; s.cube.channels()];
            let ts = targets(s)?;
            for (i, t) in ts.iter().enumerate() {
                let ig = integrated_gradients(model, &x, *t, None, *steps)?;
                for (k, v) in ig.channels.values.iter().enumerate() {
                    csv.push_str(&format!("{i},{},{},{},{k},{v}\n", t.row, t.col, t.class));
                    mean[k] += v / ts.len() as f64;
                }
                errors.push(ig.completeness_error());
            }
            write(&out.join("ig.csv"), csv)?;
            let labels: Vec<String> = (0..mean.len()).map(|k| k.to_string()).collect();
            write(&out.join("ig.svg"), plot::bar_chart("Integrated Gradients by channel", "sum |attribution|", &labels, &mean))?;
            json!({ "sample": s.sample_id, "completeness_error": errors })
        }
        Method::Ablation => {
            let s = pick_sample(&data, sample.as_deref())?;
            let x = cubes_to_tensor(&[&s.cube], precision)?;
            let region: Vec<bool> = s.mask.labels().iter().map(|&l| l == *region_class).collect();
            let mut csv = String::from("target,row,col,class,channel,attribution\n");
            let ts = targets(s)?;
            let mut mean = vec![0.0; s.cube.channels()];
            for (i, t) in ts.iter().enumerate() {
                let a = feature_ablation(model, &x, &region, *t, *baseline_value)?;
                for (k, v) in a.values.iter().enumerate() {
                    csv.push_str(&format!("{i},{},{},{},{k},{v}\n", t.row, t.col, t.class));
                    mean[k] += v / ts.len() as f64;
                }
            }
            write(&out.join("ablation.csv"), csv)?;
            let labels: Vec<String> = (0..mean.len()).map(|k| k.to_string()).collect();
            write(&out.join("ablation.svg"), plot::bar_chart("Region ablation by channel", "logit change", &labels, &mean))?;
            json!({ "sample": s.sample_id })
        }
        Method::Gradcam => {
            let s = pick_sample(&data, sample.as_deref())?;
            let x = cubes_to_tensor(&[&s.cube], precision)?;
            let t = targets(s)?[0];
            let map = gradcam(&models, &x, t, layer.as_deref(), *normalize)?;
            write(&out.join("gradcam.csv"), map.to_csv())?;
            write(&out.join("gradcam.svg"), plot::heatmap("Grad-CAM", map.height, map.width, &map.values))?;
            json!({ "sample": s.sample_id, "height": map.height, "width": map.width })
        }
    };
    write_run_json(inv, Some(&cfg), result)
}

fn cmd_sweep(
    inv: &Invocation,
    manifest: &Path,
    out: &Path,
    param: &str,
    values: &[String],
    model: Option<Variant>,
    set: &[String],
) -> Result<()> {
    let cfg = resolve_train_config(inv.document.as_ref(), model, set, inv.cli.seed)?;
    let data = Dataset::load(manifest, &cfg.preprocess)?;
    let rows = grid_sweep(&data, &cfg, param, values)?;
    write(&out.join("sweep.csv"), sweep_csv(&rows))?;
    let labels: Vec<String> = rows.iter().map(|r| r.value.clone()).collect();
    let dice: Vec<f64> = rows.iter().map(|r| r.val_dice).collect();
    write(&out.join("sweep.svg"), plot::bar_chart(&format!("Validation Dice by {param}"), "val Dice", &labels, &dice))?;
    write_run_json(inv, Some(&cfg), Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_tables_fill_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "epochs = 2\n[generate]\nsamples = 3\nsize = 32\nratios = [0.5, 0.25, 0.25]\n").unwrap();
        let inv = parse_args(["ramanseg", "--config", cfg.to_str().unwrap(), "generate", "--out", "x", "--size", "64"]).unwrap();
        match &inv.cli.command {
            Command::Generate { samples, size, ratios, .. } => {
                assert_eq!((*samples, *size), (3, 64));
                assert_eq!(ratios, &vec![0.5, 0.25, 0.25]);
            }
            other => panic!("{other:?}"),
        }
        let doc = inv.document.unwrap();
        assert!(doc.get("generate").is_none());
        assert_eq!(resolve_train_config(Some(&doc), None, &[], Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn targets_and_sets() {
        assert_eq!(parse_target("3, 4,1").unwrap(), PixelTarget { row: 3, col: 4, class: 1 });
        assert!(parse_target("3,4").unwrap_err().is_config());
        let cfg = resolve_train_config(None, Some(Variant::Unet), &["epochs=7".into()], None).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert!(resolve_train_config(None, None, &["nope=1".into()], None).unwrap_err().to_string().contains("nope"));
        assert!(matches!(
            parse_args(["ramanseg", "interpret", "--method", "lime"]),
            Err(ParseFailure::Usage(_))
        ));
    }
}
