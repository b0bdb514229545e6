//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve_data_path, Precision, RunConfig};
use crate::data::{self, make_splits, write_csv, SynthKind, SynthParams};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, MetricReport};
use crate::pipeline::{self, EvalModel};

#[derive(Debug, Parser)]
#[command(name = "tllm", version, about = "Reverse-distillation forecaster: train, evaluate, export, analyze")]
pub struct Cli {
    /// Run configuration (JSON, comments allowed).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// f32 or f64.
    #[arg(long, global = true)]
    pub precision: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the joint model; writes the run directory.
    Train(TrainArgs),
    /// Score a student artifact or a reference model.
    Eval(EvalArgs),
    /// Strip the teacher from a finished checkpoint.
    Export(ExportArgs),
    /// Attention-similarity heatmaps from a run's trace.
    Analyze(AnalyzeArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Continue an unfinished checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Student artifact; `{T}` expands to each horizon.
    #[arg(long)]
    pub artifact: Option<String>,
    /// student, oracle, naive or naive2.
    #[arg(long, default_value = "student")]
    pub model: String,
    /// Comma-separated horizons; the configured horizon when absent.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    #[arg(long)]
    pub protocol: Option<String>,
    /// Training dataset of a zero-shot pair (name such as h1, or CSV path).
    #[arg(long)]
    pub source: Option<String>,
    /// Evaluation dataset (name such as m1, or CSV path).
    #[arg(long)]
    pub target: Option<String>,
    /// Score in z-scored units instead of original units.
    #[arg(long)]
    pub normalized: bool,
    /// Report directory; defaults to `<output_dir>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Finished training checkpoint; defaults to the configured run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fold the adapters into the frozen projections.
    #[arg(long)]
    pub merge_lora: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory; defaults to the configured output directory.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// sine_trend, noise or step.
    #[arg(long, default_value = "sine_trend")]
    pub kind: String,
    #[arg(long, default_value_t = 2000)]
    pub length: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 24.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.0)]
    pub trend: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub step_at: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error: 2 for usage and configuration
/// problems, 1 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Refused(_) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::config(format!("cannot read config {}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(p) = &cli.precision {
        cfg.precision = p.parse()?;
    }
    Ok(cfg)
}

/// Dataset named on the command line: ETT short names (`h1`, `m2`, ...)
/// map to `ETTh1.csv` etc. under the data directory, anything else is a
/// path or a bare name with `.csv` appended.
pub fn named_dataset(name: &str) -> Result<PathBuf> {
    let file = match name.to_ascii_lowercase().as_str() {
        "h1" | "h2" | "m1" | "m2" => format!("ETT{name}.csv"),
        _ if name.ends_with(".csv") => name.to_string(),
        _ => format!("{name}.csv"),
    };
    resolve_data_path(Path::new(&file))
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(o) = &args.output {
        cfg.output_dir = o.clone();
    }
    let summary = match cfg.precision {
        Precision::F32 => pipeline::train_run::<f32>(&cfg, args.resume)?,
        Precision::F64 => pipeline::train_run::<f64>(&cfg, args.resume)?,
    };
    println!(
        "trained {} epoch(s) on `{}`{}; best student epoch {}; artifacts in {}",
        summary.history.len(),
        summary.dataset.name,
        if summary.stopped_early { " (teacher converged)" } else { "" },
        summary.best_epoch,
        summary.output_dir.display()
    );
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(p) = &args.protocol {
        cfg.protocol = p.parse()?;
    }
    let model = match args.model.as_str() {
        "student" => EvalModel::Artifact(
            args.artifact
                .clone()
                .ok_or_else(|| Error::config("--artifact is required for the student model"))?,
        ),
        "oracle" => EvalModel::Oracle,
        "naive" => EvalModel::RepeatLast,
        "naive2" => EvalModel::Naive2,
        other => {
            return Err(Error::config(format!(
                "unknown model `{other}` (valid: student, oracle, naive, naive2)"
            )))
        }
    };
    let load = |name: &str| -> Result<data::SeriesDataset> {
        make_splits(data::load_csv(&named_dataset(name)?)?, &cfg.data.split)
    };
    let ds = match (&args.source, &args.target) {
        (Some(s), Some(t)) => {
            let binding = data::zeroshot_pair(load(s)?, load(t)?)?;
            binding.target
        }
        (None, Some(t)) => load(t)?,
        (Some(_), None) => return Err(Error::config("--source needs --target")),
        (None, None) => cfg.evaluation_dataset()?,
    };
    let horizons = if args.horizons.is_empty() { vec![cfg.model.horizon] } else { args.horizons.clone() };
    let base = EvalOptions {
        protocol: cfg.protocol,
        lookback: cfg.model.lookback,
        horizon: cfg.model.horizon,
        stride: cfg.data.stride,
        season: cfg.loss.season,
        denormalize: cfg.denormalize && !args.normalized,
    };
    let reports = match cfg.precision {
        Precision::F32 => pipeline::evaluate_run::<f32>(&model, &ds, &horizons, &base)?,
        Precision::F64 => pipeline::evaluate_run::<f64>(&model, &ds, &horizons, &base)?,
    };
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.join("eval"));
    MetricReport::write_all(&reports, &out)?;
    print!("{}", MetricReport::to_text(&reports));
    println!("reports written to {}", out.display());
    Ok(())
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let cfg = load_config(cli)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join(pipeline::CHECKPOINT));
    let counts = match cfg.precision {
        Precision::F32 => pipeline::export::<f32>(&ckpt, &args.out, args.merge_lora)?,
        Precision::F64 => pipeline::export::<f64>(&ckpt, &args.out, args.merge_lora)?,
    };
    println!(
        "exported {} ({}): {} parameters, {} trainable, {} teacher/guidance parameters removed",
        args.out.display(),
        if args.merge_lora { "merged adapters" } else { "separate adapters" },
        counts.total,
        counts.trainable,
        counts.removed
    );
    Ok(())
}

fn analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<()> {
    let run = match &args.run {
        Some(r) => r.clone(),
        None => load_config(cli)?.output_dir,
    };
    for p in pipeline::analyze_run(&run)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let kind: SynthKind = args.kind.parse()?;
    let params = SynthParams {
        amplitude: args.amplitude,
        period: args.period,
        trend: args.trend,
        noise: args.noise,
        step_at: args.step_at,
    };
    let ds = data::synthesize(kind, cli.seed.unwrap_or(0), args.length, args.channels, &params)?;
    write_csv(&ds, &args.out)?;
    println!("wrote {} rows x {} channels to {}", ds.len(), ds.channels, args.out.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => evaluate(cli, a),
        Command::Export(a) => export(cli, a),
        Command::Analyze(a) => analyze(cli, a),
        Command::Synth(a) => synth(cli, a),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
