//! `vsr`: single binary exposing the full lip-reading pipeline.
//!
//! Subcommands: preprocess, split, train, evaluate, predict, gradcheck,
//! inspect. Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric
//! failure (gradient check above tolerance).
//!
//! Any flag of a subcommand may also be set from a `key = value` config
//! file passed with `--config`; explicit command-line flags win.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsr_core::dataset::{self, class_label, Split};
use vsr_core::error::Error;
use vsr_core::evaluation;
use vsr_core::gradcheck;
use vsr_core::models::{build, Checkpoint, ModelKind, ModelSpec};
use vsr_core::tensor::Tensor;
use vsr_core::training::{fit, ManifestSampleSet, SampleSet, TrainConfig};
use vsr_core::video::{self, ColorSpace, RoiKind, RoiTrack};

const EXIT_DATA_ERROR: u8 = 3;
const EXIT_NUMERIC_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "vsr",
    version,
    about = "Word-level visual speech recognition: preprocess videos, train and evaluate lip-reading models"
)]
struct Cli {
    /// Config file with `key = value` lines; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a directory of PPM frames (+ optional ROI sidecar) into a VLT1 tensor
    Preprocess(PreprocessArgs),
    /// Assign stratified split tags to a JSONL manifest
    Split(SplitArgs),
    /// Train a model and keep the best-validation-epoch checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint and write confusion/accuracy reports
    Evaluate(EvaluateArgs),
    /// Classify one tensor and print the word distribution
    Predict(PredictArgs),
    /// Verify every analytic backward pass against finite differences
    Gradcheck(GradcheckArgs),
    /// Describe a tensor, checkpoint or manifest file
    Inspect(InspectArgs),
}

fn parse_color(s: &str) -> Result<ColorSpace, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_roi_kind(s: &str) -> Result<RoiKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<SplitFilter, String> {
    if s == "all" {
        return Ok(SplitFilter::All);
    }
    s.parse().map(SplitFilter::Only).map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy)]
enum SplitFilter {
    All,
    Only(Split),
}

#[derive(Args)]
#[command(args_override_self = true)]
struct PreprocessArgs {
    /// Directory of P6 PPM frames named 000.ppm, 001.ppm, ...
    #[arg(long, value_name = "DIR")]
    frames_dir: PathBuf,
    /// Crop target: lips (150x100) or face (90x90)
    #[arg(long, value_parser = parse_roi_kind)]
    roi: RoiKind,
    /// ROI rectangles as JSONL; defaults to `<frames-dir>.roi.jsonl` if
    /// present, else the whole frame
    #[arg(long, value_name = "FILE")]
    roi_file: Option<PathBuf>,
    /// rgb|gray|hsv|lab|xyz|ycbcr
    #[arg(long, default_value = "rgb", value_parser = parse_color)]
    color: ColorSpace,
    /// Frame count after temporal normalization
    #[arg(long, default_value_t = 28)]
    length: usize,
    /// Output VLT1 tensor path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// train:val or train:val:test, e.g. 8:2 or 8:1:1
    #[arg(long, default_value = "8:1:1")]
    ratios: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output manifest path (may equal the input)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Number of word classes in the manifest
    #[arg(long, default_value_t = 18)]
    classes: usize,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Root for relative tensor paths; defaults to the manifest's directory
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// conv3d|gru|gruconv
    #[arg(long, value_parser = parse_model_kind)]
    model: ModelKind,
    #[arg(long, default_value_t = 1e-6)]
    lr: f32,
    #[arg(long, default_value_t = 5000)]
    epochs: usize,
    /// Training batch size
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Validation batch size
    #[arg(long, default_value_t = 32)]
    val_batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    gru_hidden: usize,
    #[arg(long, default_value_t = 128)]
    mlp_hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f32,
    #[arg(long, default_value_t = 18)]
    classes: usize,
    /// Worker threads for validation passes (1 = bit-reproducible)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Best checkpoint output path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Epoch log CSV; defaults to `<out>.epochs.csv`
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Expected architecture; rejects checkpoints of a different kind
    #[arg(long, value_parser = parse_model_kind)]
    model: Option<ModelKind>,
    /// train|val|test|unassigned|all
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: SplitFilter,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Report directory (confusion.csv, per_class.csv, accuracy.txt)
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Epoch CSV from training, copied into the report directory
    #[arg(long, value_name = "FILE")]
    epochs_csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// VLT1 tensor of one preprocessed video
    #[arg(long, value_name = "FILE")]
    tensor: PathBuf,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct GradcheckArgs {
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct InspectArgs {
    /// Tensor (.vlt), checkpoint (.vlck) or JSONL manifest
    path: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match overlay_config(argv) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_DATA_ERROR);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports usage problems itself with exit code 2
            e.exit();
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_DATA_ERROR)
        }
    }
}

/// Inject `key = value` pairs from a `--config` file as flags right after
/// the subcommand, so explicit command-line flags override them.
fn overlay_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    if argv.len() < 2 || argv[1].starts_with('-') {
        return Ok(argv);
    }
    let mut config_path: Option<String> = None;
    let mut iter = argv[2..].iter();
    while let Some(arg) = iter.next() {
        if let Some(v) = arg.strip_prefix("--config=") {
            config_path = Some(v.to_string());
        } else if arg == "--config" {
            config_path = iter.next().cloned();
        }
    }
    let Some(path) = config_path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("read config {path}: {e}"))?;
    let mut injected = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let value = value.trim().trim_matches('"');
        if key.is_empty() {
            return Err(format!("{path}:{}: empty key", lineno + 1));
        }
        match value {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            other => {
                injected.push(format!("--{key}"));
                injected.push(other.to_string());
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend(argv[2..].iter().cloned());
    Ok(out)
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<u8, Error> {
    let frames = video::load_frames(&a.frames_dir)?;
    let (width, height) = frames.frame_size();
    let roi = match &a.roi_file {
        Some(path) => RoiTrack::load_jsonl(path, a.roi)?,
        None => {
            let sidecar = PathBuf::from(format!("{}.roi.jsonl", a.frames_dir.display()));
            if sidecar.is_file() {
                RoiTrack::load_jsonl(&sidecar, a.roi)?
            } else {
                RoiTrack::full_frame(a.roi, width, height, frames.len())
            }
        }
    };
    let tensor = video::preprocess(&frames, &roi, a.color, a.length)?;
    tensor.save_vlt1(&a.out)?;
    println!(
        "{}: {} frames -> tensor {:?} ({})",
        a.out.display(),
        frames.len(),
        tensor.shape(),
        a.color.name()
    );
    Ok(0)
}

fn cmd_split(a: SplitArgs) -> Result<u8, Error> {
    let entries = dataset::load_manifest(&a.manifest, a.classes)?;
    let spec = dataset::SplitSpec::parse(&a.ratios, a.seed)?;
    let tagged = dataset::stratified_split(&entries, &spec, a.classes)?;
    dataset::save_manifest(&tagged, &a.out)?;
    let count = |s: Split| tagged.iter().filter(|e| e.split == s).count();
    println!(
        "{}: {} entries -> train {} / val {} / test {}",
        a.out.display(),
        tagged.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(0)
}

fn manifest_root(manifest: &Path, data_root: Option<PathBuf>) -> PathBuf {
    data_root.unwrap_or_else(|| {
        manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn cmd_train(a: TrainArgs) -> Result<u8, Error> {
    let entries = dataset::load_manifest(&a.manifest, a.classes)?;
    let root = manifest_root(&a.manifest, a.data_root);
    let train_entries: Vec<_> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .cloned()
        .collect();
    let val_entries: Vec<_> = entries
        .iter()
        .filter(|e| e.split == Split::Val)
        .cloned()
        .collect();
    if train_entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no entries tagged split=train (run `vsr split` first)",
            a.manifest.display()
        )));
    }
    if val_entries.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let train_set = ManifestSampleSet::new(train_entries, root.clone());
    let val_set = ManifestSampleSet::new(val_entries, root);

    let (first, _) = train_set.load(0)?;
    let input_shape: [usize; 4] = first.shape().try_into().map_err(|_| {
        Error::ShapeMismatch(format!(
            "training tensors must be rank 4 (C, T, H, W), got {:?}",
            first.shape()
        ))
    })?;
    let spec = ModelSpec {
        kind: a.model,
        input_shape,
        num_classes: a.classes,
        gru_hidden: a.gru_hidden,
        mlp_hidden: a.mlp_hidden,
        dropout: a.dropout,
        seed: a.seed,
    };
    let mut model = build(&spec)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_train: a.batch,
        batch_val: a.val_batch,
        threads: a.threads,
        ..TrainConfig::new(a.epochs, a.seed)
    };

    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.epochs.csv", a.out.display())));
    let mut log = fs::File::create(&log_path)
        .map_err(|e| Error::io(format!("create {}", log_path.display()), e))?;
    writeln!(log, "{}", vsr_core::training::EpochReport::CSV_HEADER)
        .map_err(|e| Error::io(format!("write {}", log_path.display()), e))?;

    println!(
        "training {} on {:?}: {} train / {} val samples, lr {}, batch {}",
        a.model.name(),
        input_shape,
        train_set.len(),
        val_set.len(),
        a.lr,
        a.batch
    );
    let mut log_err: Option<std::io::Error> = None;
    let (best, _reports) = fit(&mut model, &train_set, &val_set, &cfg, |report| {
        println!(
            "epoch {:>4}: loss {:.6} train_acc {:.4} val_acc {:.4} ({:.2}s)",
            report.epoch, report.train_loss, report.train_acc, report.val_acc, report.seconds
        );
        if log_err.is_none() {
            log_err = writeln!(log, "{}", report.csv_row())
                .and_then(|_| log.flush())
                .err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::io(format!("write {}", log_path.display()), e));
    }
    best.save(&a.out)?;
    println!(
        "best epoch {} (val_acc {:.4}) -> {}; epoch log: {}",
        best.epoch,
        best.val_accuracy,
        a.out.display(),
        log_path.display()
    );
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<u8, Error> {
    let ckpt = Checkpoint::load_expecting(&a.checkpoint, a.model)?;
    let model = ckpt.to_model()?;
    let classes = model.spec().num_classes;
    let entries = dataset::load_manifest(&a.manifest, classes)?;
    let root = manifest_root(&a.manifest, a.data_root);
    let selected: Vec<_> = entries
        .into_iter()
        .filter(|e| match a.split {
            SplitFilter::All => true,
            SplitFilter::Only(s) => e.split == s,
        })
        .collect();
    let set = ManifestSampleSet::new(selected, root);
    let result = evaluation::evaluate(&model, &set, a.batch, a.threads)?;
    evaluation::emit_reports(&result, a.epochs_csv.as_deref(), &a.out_dir)?;
    println!(
        "{} samples, accuracy {:.6}; reports in {}",
        result.confusion.total(),
        result.accuracy,
        a.out_dir.display()
    );
    Ok(0)
}

fn cmd_predict(a: PredictArgs) -> Result<u8, Error> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let tensor = Tensor::<f32>::load_vlt1(&a.tensor)?;
    let (_, probs) = model.predict(&tensor)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| {
        probs[j]
            .partial_cmp(&probs[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut stdout = std::io::stdout().lock();
    for class in order {
        writeln!(
            stdout,
            "{}\t{:.6}",
            class_label(class, probs.len()),
            probs[class]
        )
        .map_err(|e| Error::io("write stdout", e))?;
    }
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<u8, Error> {
    let report = gradcheck::run_all(a.tol, a.seed);
    println!(
        "{:<12} {:<44} {:>12}  result (tol {:.1e})",
        "layer", "case", "max rel err", a.tol
    );
    for check in &report.checks {
        let ok = check.max_rel_error < report.tolerance;
        println!(
            "{:<12} {:<44} {:>12.3e}  {}",
            check.layer,
            check.case,
            check.max_rel_error,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(0)
    } else {
        eprintln!("error: gradient check exceeded tolerance {:.1e}", a.tol);
        Ok(EXIT_NUMERIC_FAILURE)
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<u8, Error> {
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f = fs::File::open(&a.path)
            .map_err(|e| Error::io(format!("open {}", a.path.display()), e))?;
        let n = f
            .read(&mut magic)
            .map_err(|e| Error::io(format!("read {}", a.path.display()), e))?;
        if n < 4 {
            return Err(Error::TruncatedFile(a.path.display().to_string()));
        }
    }
    match &magic {
        b"VLT1" => {
            let t = Tensor::<f32>::load_vlt1(&a.path)?;
            let (mut min, mut max) = (f32::INFINITY, f32::NEG_INFINITY);
            let mut sum = 0.0f64;
            for &v in t.data() {
                min = min.min(v);
                max = max.max(v);
                sum += v as f64;
            }
            println!("VLT1 tensor {}", a.path.display());
            println!("  shape: {:?} ({} elements)", t.shape(), t.len());
            println!(
                "  min {:.6}  max {:.6}  mean {:.6}",
                min,
                max,
                sum / t.len() as f64
            );
        }
        b"VLCK" => {
            let ckpt = Checkpoint::load(&a.path)?;
            let spec = &ckpt.spec;
            println!("VLCK checkpoint {}", a.path.display());
            println!("  model: {}", spec.kind.name());
            println!("  input shape: {:?}", spec.input_shape);
            println!(
                "  classes: {}  gru_hidden: {}  mlp_hidden: {}  dropout: {}  seed: {}",
                spec.num_classes, spec.gru_hidden, spec.mlp_hidden, spec.dropout, spec.seed
            );
            println!(
                "  epoch: {}  val_accuracy: {:.6}",
                ckpt.epoch, ckpt.val_accuracy
            );
            let params: usize = ckpt.tensors.iter().map(|(_, t)| t.len()).sum();
            println!("  tensors: {} ({} values)", ckpt.tensors.len(), params);
            for (name, t) in &ckpt.tensors {
                println!("    {name}: {:?}", t.shape());
            }
        }
        _ => {
            let entries = dataset::load_manifest(&a.path, dataset::VOCABULARY.len())?;
            println!("JSONL manifest {}", a.path.display());
            println!("  entries: {}", entries.len());
            for split in [Split::Train, Split::Val, Split::Test, Split::Unassigned] {
                let n = entries.iter().filter(|e| e.split == split).count();
                if n > 0 {
                    println!("  {}: {}", split.name(), n);
                }
            }
            println!("  class histogram:");
            let hist = dataset::class_histogram(&entries, dataset::VOCABULARY.len());
            for (label, (count, pct)) in hist.iter().enumerate() {
                if *count > 0 {
                    println!(
                        "    {:>2} {:<12} {:>6} ({pct}%)",
                        label,
                        class_label(label, dataset::VOCABULARY.len()),
                        count
                    );
                }
            }
        }
    }
    Ok(0)
}
