//! The `inpaint` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::autograd::check::{standard_cases, GradCheckConfig};
use crate::dataset::{self, png, recompose, SplitName, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::model::{builtin, Head, ModelName};
use crate::tensor::Tensor;
use crate::train::{self, ConfigFile, TrainConfig};

/// Version tag carried by every `--json` document.
pub const JSON_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "inpaint", version, about = "Center-patch image completion on CIFAR-10")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every model's layer chain against its declared shapes.
    Audit(AuditArgs),
    /// Compare analytic and finite-difference gradients for every layer kind.
    Gradcheck(GradcheckArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Report a checkpoint's MSE on a split.
    Eval(EvalArgs),
    /// Fill in the center of one image and write it as PNG.
    Inpaint(InpaintArgs),
    /// Score the constant-0.5 and train-mean-patch predictors.
    Baseline(BaselineArgs),
    /// Write a procedurally generated dataset in CIFAR-10 binary layout.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy)]
pub enum ModelChoice {
    All,
    One(ModelName),
}

fn parse_model_choice(s: &str) -> std::result::Result<ModelChoice, String> {
    if s == "all" {
        return Ok(ModelChoice::All);
    }
    parse_model(s).map(ModelChoice::One)
}

fn parse_model(s: &str) -> std::result::Result<ModelName, String> {
    s.parse::<ModelName>().map_err(|_| {
        let names: Vec<&str> = ModelName::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown model `{s}` (expected one of: {})", names.join(", "))
    })
}

fn parse_head(s: &str) -> std::result::Result<Head, String> {
    s.parse::<Head>().map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<SplitName, String> {
    s.parse::<SplitName>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// A model name or `all`.
    #[arg(long, value_parser = parse_model_choice, default_value = "all")]
    pub model: ModelChoice,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = crate::autograd::check::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with any of the settings below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelName>,
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Factor applied at each milestone.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Comma-separated epochs at which the rate decays.
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for the dev/test partition.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Train on the first K training images only.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, value_parser = parse_head)]
    pub head: Option<Head>,
    /// Evaluate on dev every N epochs (always on the last).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Write wall time to the loss curve's `seconds` column.
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["index", "image"])))]
pub struct InpaintArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Position within `--split`; needs `--data`.
    #[arg(long, requires = "data")]
    pub index: Option<usize>,
    /// A 32x32 RGB PNG.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "dev")]
    pub split: SplitName,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict the training split (and the mean patch) to its first K images.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses the process arguments, runs the command and maps failures to
/// exit codes (2 for usage errors, 1 for everything else).
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

pub fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Audit(a) => cmd_audit(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Inpaint(a) => cmd_inpaint(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_json(kind: &str, body: serde_json::Value) -> Result<()> {
    let mut doc = json!({ "schema": format!("inpaint.{kind}"), "version": JSON_SCHEMA_VERSION });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("report serializes")
}

fn cmd_audit(args: &AuditArgs) -> Result<ExitCode> {
    let models = match args.model {
        ModelChoice::All => ModelName::ALL.to_vec(),
        ModelChoice::One(m) => vec![m],
    };
    let reports: Vec<_> = models.iter().map(|&m| builtin(m).audit_shapes()).collect();
    let ok = reports.iter().all(|r| r.passed);
    if args.json {
        print_json("audit", json!({ "passed": ok, "models": to_value(&reports) }))?;
    } else {
        for r in &reports {
            println!("{r}\n");
        }
        println!("{} of {} models pass", reports.iter().filter(|r| r.passed).count(), reports.len());
    }
    Ok(status(ok))
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let cfg = GradCheckConfig {
        seed: args.seed,
        step: args.step,
        ..GradCheckConfig::default()
    };
    let reports = standard_cases()
        .iter()
        .map(|c| c.run(&cfg))
        .collect::<Result<Vec<_>>>()?;
    let ok = reports.iter().all(|r| r.passed());
    if args.json {
        let layers: Vec<_> = reports
            .iter()
            .map(|r| {
                json!({
                    "layer": r.layer,
                    "max_rel_error": r.max_error(),
                    "passed": r.passed(),
                    "entries": to_value(&r.entries),
                })
            })
            .collect();
        print_json(
            "gradcheck",
            json!({ "seed": args.seed, "tolerance": crate::autograd::check::TOLERANCE, "passed": ok, "layers": layers }),
        )?;
    } else {
        for r in &reports {
            println!("{r}");
        }
        println!(
            "{} of {} layers within {:e}",
            reports.iter().filter(|r| r.passed()).count(),
            reports.len(),
            crate::autograd::check::TOLERANCE
        );
    }
    Ok(status(ok))
}

fn load_splits(data: &Path, split_seed: u64) -> Result<Splits> {
    dataset::split(dataset::load_cifar10(data)?, &SplitSpec::standard(split_seed))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let flags = ConfigFile {
        model: args.model,
        head: args.head,
        data: args.data,
        out: args.out,
        epochs: args.epochs,
        batch: args.batch,
        lr: args.lr,
        decay: args.decay,
        milestones: args.milestones,
        seed: args.seed,
        split_seed: args.split_seed,
        subset: args.subset,
        eval_every: args.eval_every,
        record_time: args.record_time.then_some(true),
    };
    let cfg = TrainConfig::resolve(file.overlay(flags))?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Contract("no data directory given (--data)".into()))?;
    let splits = load_splits(&data, cfg.split_seed)?;
    let outcome = train::train(&cfg, &splits.train, &splits.dev)?;
    let first = &outcome.curve.records[0];
    let last = outcome.curve.records.last().expect("at least one epoch");
    println!("model {} ({} head), {} epochs", cfg.model, cfg.head, cfg.epochs);
    println!("train mse: first epoch {:.6}, last epoch {:.6}", first.train_mse, last.train_mse);
    println!("best dev mse {:.6} at epoch {}", outcome.best.dev_loss, outcome.best.epoch);
    println!("wrote {}", cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let (ckpt, spec) = train::load_model(&args.checkpoint)?;
    let splits = load_splits(&args.data, ckpt.split_seed)?;
    let eval = train::evaluate(&spec, &ckpt.params, splits.get(args.split))?;
    if args.json {
        print_json(
            "eval",
            json!({
                "checkpoint": args.checkpoint,
                "model": ckpt.model,
                "head": ckpt.head,
                "epoch": ckpt.epoch,
                "split": args.split,
                "count": eval.count,
                "mse": eval.mse,
                "per_class": to_value(&eval.per_class),
            }),
        )?;
    } else {
        println!("model {} epoch {} on {} ({} images)", ckpt.model, ckpt.epoch, args.split, eval.count);
        println!("mean mse {:.6}", eval.mse);
        println!("class  count       mse");
        for c in &eval.per_class {
            println!("{:>5} {:>6}  {:.6}", c.class, c.count, c.mse);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inpaint(args: &InpaintArgs) -> Result<ExitCode> {
    let (ckpt, spec) = train::load_model(&args.checkpoint)?;
    let source: Tensor = match (&args.image, args.index) {
        (Some(path), _) => {
            let img = png::import_png(path)?;
            if img.dims() != dataset::image_shape().dims() {
                eprintln!("error: {} is {}, expected a 32x32 RGB image", path.display(), img.shape());
                return Ok(ExitCode::from(2));
            }
            img
        }
        (None, Some(i)) => {
            let data = args.data.as_ref().expect("clap enforces --data with --index");
            let splits = load_splits(data, ckpt.split_seed)?;
            let set = splits.get(args.split);
            let img = set.images.get(i).ok_or_else(|| {
                Error::Range(format!("index {i} out of range for {} ({} images)", args.split, set.len()))
            })?;
            img.pixels()
        }
        (None, None) => unreachable!("clap requires --index or --image"),
    };
    let masked = dataset::apply_mask(&source)?;
    let prediction = spec.forward(&ckpt.params, &masked)?;
    let filled = recompose(&masked, &prediction)?;
    png::export_png(&filled, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_baseline(args: &BaselineArgs) -> Result<ExitCode> {
    let splits = load_splits(&args.data, args.split_seed)?;
    let train_set = match args.subset {
        Some(0) => return Err(Error::Contract("subset must be at least 1".into())),
        Some(k) if k > splits.train.len() => {
            return Err(Error::Contract(format!("subset {k} exceeds {} training images", splits.train.len())))
        }
        Some(k) => splits.train.truncated(k),
        None => splits.train.clone(),
    };
    let rows = [
        (SplitName::Train, train::baselines(&train_set, &train_set)?),
        (SplitName::Dev, train::baselines(&train_set, &splits.dev)?),
        (SplitName::Test, train::baselines(&train_set, &splits.test)?),
    ];
    if args.json {
        let map: serde_json::Map<String, serde_json::Value> =
            rows.iter().map(|(s, b)| (s.to_string(), to_value(b))).collect();
        print_json(
            "baseline",
            json!({ "train_images": train_set.len(), "split_seed": args.split_seed, "splits": map }),
        )?;
    } else {
        println!("train images used: {}", train_set.len());
        println!("split   constant_0.5  train_mean");
        for (s, b) in &rows {
            println!("{:<6} {:>13.6} {:>11.6}", s.to_string(), b.constant_half, b.train_mean);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: &SynthArgs) -> Result<ExitCode> {
    dataset::synthetic::write_synthetic_cifar(&args.out, args.seed)?;
    println!("wrote synthetic dataset to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
