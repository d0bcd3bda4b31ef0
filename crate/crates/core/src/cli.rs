//! The `dub3d` command line: argument parsing, config loading, run logs and
//! stable exit codes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{
    ingest_external, preprocess_clip, sample_frames, synth_dataset, DataError, Frame, Label, ManifestSource, Mode,
    Offset, PreprocessConfig, Split, SynthSpec,
};
use crate::flow::{extract_flow_sequence, flow_cache_path, FlowConfig, FlowError};
use crate::model::ModelError;
use crate::stats::{composition_summary, histogram, render_report, write_composition_csv, Dimension};
use crate::tensor::TensorError;
use crate::train::{
    balanced_metrics, per_generator_breakdown, read_predictions, train, write_predictions, Resampling, RunConfig,
    TrainError, TrainOptions, Trained, DEFAULT_REPEATS,
};
use crate::util::RunLog;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "dub3d", version, about = "Detect AI-generated video with a dual-branch 3D transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Predict every clip of one split with a checkpoint.
    Eval(EvalArgs),
    /// Balanced accuracy and F1 from a predictions file.
    Metrics(MetricsArgs),
    /// Compute and cache the flow sequence of one clip.
    Flow(FlowArgs),
    /// Render a synthetic dataset.
    Synth(SynthArgs),
    /// Composition table and distribution reports for a manifest.
    Stats(StatsArgs),
    /// Manifest utilities.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "in_domain_test")]
    split: String,
    /// Predictions file to write.
    #[arg(long)]
    out: PathBuf,
    /// Reject checkpoints for any other variant.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Enumerate every majority subset instead of sampling.
    #[arg(long)]
    exhaustive: bool,
    /// Add one row per generator model; needs --manifest.
    #[arg(long)]
    per_model: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for a JSON report and the run log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlowArgs {
    /// Clip file, frame directory or container.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    interval: usize,
    /// Flow file to write; defaults to the cache path next to the clip.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run config JSON supplying preprocessing and flow settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame rate assumed for frame directories.
    #[arg(long, default_value_t = 8.0)]
    fps: f32,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Spec JSON, or the name of a preset.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// JSON-lines manifest, composition table, or `genviddet` for the
    /// shipped table.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ManifestCommand {
    /// Parse and check every entry.
    Validate {
        path: PathBuf,
    },
}

/// A failure with its exit code. Displayed as one JSON line.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }

    pub fn kind(&self) -> &'static str {
        match self.code {
            EXIT_USAGE => "usage",
            EXIT_CONFIG => "config",
            EXIT_DATA => "data",
            _ => "internal",
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind(), "code": self.code, "message": self.message }).to_string()
    }
}

fn tensor_code(e: &TensorError) -> i32 {
    match e {
        TensorError::Io(_) | TensorError::Checkpoint(_) => EXIT_DATA,
        TensorError::VariantMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            e if e.is_config() => EXIT_CONFIG,
            DataError::Tensor(t) => tensor_code(t),
            _ => EXIT_DATA,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) | TrainError::Model(ModelError::Config(_)) | TrainError::Flow(FlowError::Config(_)) => {
                EXIT_CONFIG
            }
            TrainError::Flow(FlowError::UnknownEstimator(_) | FlowError::IntervalTooLarge { .. }) => EXIT_CONFIG,
            TrainError::Dataset(d) if d.is_config() => EXIT_CONFIG,
            TrainError::Data(_) | TrainError::Dataset(_) | TrainError::Io { .. } => EXIT_DATA,
            TrainError::Tensor(t) | TrainError::Model(ModelError::Tensor(t)) => tensor_code(t),
            _ => EXIT_INTERNAL,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        TrainError::Flow(e).into()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

/// Reads a JSON config, naming the offending field path on failure.
fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::config(format!("config {} at `{field}`: {}", path.display(), e.inner()))
    })
}

fn open_log(dir: &Path, command: &str, config: &impl serde::Serialize, seed: u64) -> Result<RunLog, CliError> {
    RunLog::create(dir, command, config, seed).map_err(|e| io_err(dir, e))
}

fn log_event(log: &mut RunLog, kind: &str, payload: serde_json::Value) -> Result<(), CliError> {
    log.event(kind, payload)
        .map_err(|e| CliError::data(format!("run log: {e}")))
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    name.parse().map_err(|e: DataError| CliError::config(format!("split: {e}")))
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Output goes to stdout; failures print one JSON line to
/// stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.code
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Flow(a) => cmd_flow(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Manifest(ManifestCommand::Validate { path }) => cmd_validate(&path),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let path = a
        .config
        .ok_or_else(|| CliError::config("config: --config <file> is required"))?;
    let mut run: RunConfig = read_json_config(&path)?;
    if let Some(seed) = a.seed {
        run.seed = seed;
    }
    if let Some(out) = a.out {
        run.output_dir = out;
    }
    run.validate()?;
    let mut log = open_log(&run.output_dir, "train", &run, run.seed)?;
    let opts = TrainOptions {
        max_steps: a.max_steps,
        skip_train_accuracy: false,
    };
    let outcome = train(&run, &opts, &mut log)?;
    let last = outcome.steps.last().map(|s| s.loss);
    println!(
        "trained {} for {} steps; final loss {}; train accuracy {:.4}; checkpoint {}",
        run.model.name(),
        outcome.steps.len(),
        last.map_or("n/a".into(), |l| format!("{l:.4}")),
        outcome.train_accuracy,
        outcome.checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let split = parse_split(&a.split)?;
    let trained = Trained::load(&a.ckpt, a.variant.as_deref())?;
    let source = ManifestSource::open(&a.manifest)?;
    let ManifestSource::Entries(entries) = source else {
        return Err(CliError::data("eval needs a JSON-lines manifest of clips, not a composition table"));
    };
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let config = json!({ "ckpt": a.ckpt, "manifest": a.manifest, "split": split.as_str(), "out": a.out });
    let mut log = open_log(dir, "eval", &config, trained.run.seed)?;
    let root = a.manifest.parent().unwrap_or(Path::new(""));
    let set = trained.predict(&entries, root, split)?;
    write_predictions(&a.out, &set.predictions)?;
    log_event(&mut log, "predictions", json!({ "count": set.predictions.len(), "path": a.out }))?;
    println!("wrote {} predictions for {} to {}", set.predictions.len(), split, a.out.display());
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), CliError> {
    let resampling = if a.exhaustive {
        Resampling::Exhaustive
    } else {
        if a.repeats == 0 {
            return Err(CliError::config("repeats: must be at least 1"));
        }
        Resampling::Random {
            repeats: a.repeats,
            seed: a.seed,
        }
    };
    if a.per_model && a.manifest.is_none() {
        return Err(CliError::config("manifest: --per-model needs --manifest <file>"));
    }
    let config = json!({ "preds": a.preds, "repeats": a.repeats, "exhaustive": a.exhaustive, "per_model": a.per_model, "manifest": a.manifest });
    let mut log = match &a.out {
        Some(dir) => open_log(dir, "metrics", &config, a.seed)?,
        None => RunLog::disabled(),
    };
    let preds = read_predictions(&a.preds)?;
    let overall = balanced_metrics(&preds, resampling).map_err(|e| CliError::data(e.to_string()))?;
    println!(
        "accuracy {:.4} ± {:.4}  f1 {:.4} ± {:.4}  ({} repeats, {} per class)",
        overall.accuracy_mean, overall.accuracy_std, overall.f1_mean, overall.f1_std, overall.repeats, overall.per_class
    );
    let mut rows = Vec::new();
    if let Some(path) = a.manifest.as_deref().filter(|_| a.per_model) {
        let ManifestSource::Entries(entries) = ManifestSource::open(path)? else {
            return Err(CliError::data("--per-model needs a JSON-lines manifest"));
        };
        rows = per_generator_breakdown(&preds, &entries, resampling).map_err(|e| CliError::data(e.to_string()))?;
        for row in &rows {
            match (&row.report, &row.warning) {
                (Some(r), _) => println!(
                    "{:<20} {:>7} clips  accuracy {:.4} ± {:.4}  f1 {:.4} ± {:.4}",
                    row.model, row.clips, r.accuracy_mean, r.accuracy_std, r.f1_mean, r.f1_std
                ),
                (None, Some(w)) => eprintln!("warning: {w}"),
                (None, None) => {}
            }
        }
    }
    let report = json!({ "overall": overall, "per_model": rows });
    log_event(&mut log, "metrics", report.clone())?;
    if let Some(dir) = &a.out {
        let path = dir.join("metrics.json");
        fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn cmd_flow(a: FlowArgs) -> Result<(), CliError> {
    let (preprocess, flow, decoder) = match &a.config {
        Some(p) => {
            let run: RunConfig = read_json_config(p)?;
            (run.preprocess, run.flow, run.decoder_command)
        }
        None => (PreprocessConfig::default(), FlowConfig::default(), None),
    };
    preprocess.validate()?;
    flow.validate()?;
    let out = a.out.clone().unwrap_or_else(|| flow_cache_path(&a.input, a.interval));
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let config = json!({ "input": a.input, "interval": a.interval, "out": out, "preprocess": preprocess, "flow": flow });
    let mut log = open_log(dir, "flow", &config, 0)?;
    let raw = ingest_external(&a.input, decoder.as_deref(), a.fps)?.clip;
    if raw.frames.is_empty() {
        return Err(CliError::data(format!("{}: clip has no frames", a.input.display())));
    }
    // Same sampling and preprocessing as evaluation, so the cache matches.
    let idx = sample_frames(raw.frames.len(), raw.fps as f64, preprocess.frame_count, preprocess.target_fps, Offset::Start);
    let frames: Vec<Frame> = idx.iter().map(|&i| raw.frames[i].clone()).collect();
    let clip = preprocess_clip(&frames, &preprocess, Mode::Eval)?;
    let field = extract_flow_sequence(&clip, a.interval, &flow)?;
    field.save(&out, &flow)?;
    log_event(&mut log, "flow", json!({ "steps": field.len(), "shape": field.flows.shape(), "path": out }))?;
    println!("wrote {} flow fields {:?} to {}", field.len(), field.flows.shape(), out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = if Path::new(&a.spec).is_file() {
        let text = fs::read_to_string(&a.spec).map_err(|e| CliError::config(format!("spec {}: {e}", a.spec)))?;
        SynthSpec::from_json(&text)?
    } else {
        SynthSpec::preset(&a.spec)?
    };
    let mut log = open_log(&a.out, "synth", &spec, a.seed)?;
    let entries = synth_dataset(&spec, &a.out, a.seed)?;
    log_event(&mut log, "synth", json!({ "clips": entries.len() }))?;
    println!("wrote {} clips to {}", entries.len(), a.out.display());
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<(), CliError> {
    let split = a.split.as_deref().map(parse_split).transpose()?;
    let source = ManifestSource::open(&a.manifest)?;
    let config = json!({ "manifest": a.manifest, "split": split.map(Split::as_str), "out": a.out });
    let mut log = open_log(&a.out, "stats", &config, 0)?;
    let entries = || source.entries().filter(move |e| split.map_or(true, |s| e.split == s));
    let summary = composition_summary(entries());
    let reports: Vec<_> = Dimension::ALL.iter().map(|&d| histogram(d, entries(), None)).collect();
    let mut written = render_report(&reports, &a.out).map_err(|e| io_err(&a.out, e))?;
    written.push(write_composition_csv(&summary, &a.out).map_err(|e| io_err(&a.out, e))?);
    log_event(&mut log, "stats", json!({ "total_clips": summary.total_clips, "total_hours": summary.total_hours, "files": written }))?;
    for row in &summary.rows {
        println!("{:<20} {:<11} {:<11} {:<16} {:>9}", row.category, row.method, row.source, row.model, row.count);
    }
    println!("total {} clips, {:.1} hours", summary.total_clips, summary.total_hours);
    for r in &reports {
        for h in &r.per_label {
            let cells: Vec<String> = r.bins.iter().enumerate().map(|(i, b)| format!("{b} {:.1}%", h.pct(i))).collect();
            println!("{} {}: {}", r.dimension, h.label, cells.join(", "));
        }
    }
    if let Some(h) = reports[2].label(Label::Generated) {
        println!("longest generated clip: {} frames", h.max_frame_count.unwrap_or(0));
    }
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let source = ManifestSource::open(path)?;
    let mut counts = [0u64; 3];
    let mut total = 0u64;
    for e in source.entries() {
        e.validate().map_err(|r| CliError::data(format!("{}: entry `{}`: {r}", path.display(), e.id)))?;
        counts[Split::ALL.iter().position(|&s| s == e.split).expect("known split")] += 1;
        total += 1;
    }
    let parts: Vec<String> = Split::ALL.iter().zip(counts).map(|(s, c)| format!("{s} {c}")).collect();
    println!("ok: {total} entries ({})", parts.join(", "));
    Ok(())
}
