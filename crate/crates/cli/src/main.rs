use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use emma_core::emma::LossWeights;
use emma_core::harness::{
    evaluate_corpus, rechunk, render, threshold_sweep, train_toy_policy, write_traces, CorpusRun, Manifest,
    ModelSpec, ReportFormat, SweepReport, ToyTrainConfig, TrainingReport,
};
use emma_core::Error;

#[derive(Debug, Parser)]
#[command(name = "emma", version, about = "Simultaneous translation policy evaluation and toy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a corpus at one threshold.
    Evaluate(EvalArgs),
    /// Evaluate a corpus at several thresholds.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated thresholds; overrides the manifest's list.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
    /// Train toy policies under several loss weightings and compare them.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Give every source chunk this duration.
    #[arg(long)]
    chunk_ms: Option<f64>,
    /// Minimum units per emitted chunk.
    #[arg(long)]
    l_unit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss weights of a toy_trained model.
    #[arg(long)]
    lambda_latency: Option<f64>,
    #[arg(long)]
    lambda_variance: Option<f64>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-instance event logs into this directory.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5")]
    lambda_latency: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    lambda_variance: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn prepare(args: &EvalArgs) -> anyhow::Result<(Manifest, Vec<emma_core::policy::StreamInstance>)> {
    let mut manifest = Manifest::load(&args.manifest)?;
    if let Some(t) = args.threshold {
        manifest.runtime.threshold = t;
    }
    if let Some(l) = args.l_unit {
        manifest.runtime.min_unit_chunk = l;
    }
    if let Some(s) = args.seed {
        manifest.seed = s;
    }
    if args.lambda_latency.is_some() || args.lambda_variance.is_some() {
        let ModelSpec::ToyTrained(params) = &mut manifest.model else {
            return Err(Error::Argument("--lambda-latency and --lambda-variance need a toy_trained model".into()).into());
        };
        params.lambda_latency = args.lambda_latency.unwrap_or(params.lambda_latency);
        params.lambda_variance = args.lambda_variance.unwrap_or(params.lambda_variance);
    }
    manifest.validate()?;
    let mut instances = manifest.load_instances()?;
    if let Some(ms) = args.chunk_ms {
        rechunk(&mut instances, ms)?;
    }
    Ok((manifest, instances))
}

fn evaluate(args: &EvalArgs) -> anyhow::Result<()> {
    let (manifest, instances) = prepare(args)?;
    let model = manifest.build_model()?;
    let run = evaluate_corpus(&model, &instances, &manifest.runtime, manifest.latency_unit, args.workers)?;
    warn_failures(&run);
    if let Some(dir) = &args.trace_dir {
        write_traces(dir, &run.traces)?;
    }
    let report = SweepReport::from_reports([&run.report]);
    write_output(args.out.as_deref(), &render(&report, args.format))
}

fn sweep(args: &EvalArgs, thresholds: Option<&[f64]>) -> anyhow::Result<()> {
    let (manifest, instances) = prepare(args)?;
    let thresholds = match (thresholds, &manifest.sweep) {
        (Some(t), _) => t.to_vec(),
        (None, Some(t)) => t.clone(),
        (None, None) => bail!(Error::Argument("no thresholds: pass --sweep or set one in the manifest".into())),
    };
    let model = manifest.build_model()?;
    let runs = threshold_sweep(
        &model,
        &instances,
        &manifest.runtime,
        &thresholds,
        manifest.latency_unit,
        args.workers,
    )?;
    for run in &runs {
        warn_failures(run);
        if let Some(dir) = &args.trace_dir {
            write_traces(&dir.join(format!("t{:.6}", run.report.threshold)), &run.traces)?;
        }
    }
    let report = SweepReport::from_reports(runs.iter().map(|r| &r.report));
    write_output(args.out.as_deref(), &render(&report, args.format))
}

fn warn_failures(run: &CorpusRun) {
    for f in &run.report.failures {
        eprintln!("warning: {} failed: {}", f.id, f.message);
    }
    if run.report.latency.offset_warnings > 0 {
        eprintln!(
            "warning: {} instances had no emissions and are left out of the offsets",
            run.report.latency.offset_warnings
        );
    }
}

fn training_csv(report: &TrainingReport) -> String {
    let mut out = String::from("lambda_latency,lambda_variance,nll,mean_delay,mean_variance\n");
    for run in &report.runs {
        let t = &run.final_terms;
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            run.weights.lambda_latency, run.weights.lambda_variance, t.nll, t.mean_delay, t.variance
        ));
    }
    out
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut weights = Vec::new();
    for &lambda_latency in &args.lambda_latency {
        for &lambda_variance in &args.lambda_variance {
            weights.push(LossWeights::new(lambda_latency, lambda_variance)?);
        }
    }
    let defaults = ToyTrainConfig::default();
    let config = ToyTrainConfig {
        steps: args.steps,
        seed: args.seed,
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        weights,
        ..defaults
    };
    let report = train_toy_policy(&config)?;
    let text = match args.format {
        ReportFormat::Csv => training_csv(&report),
        ReportFormat::Json => serde_json::to_string_pretty(&report).context("serializing training report")? + "\n",
    };
    write_output(args.out.as_deref(), &text)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::CorpusFailed(_) | Error::Diverged { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Evaluate(args) => evaluate(args),
        Command::Sweep { eval, sweep: thresholds } => sweep(eval, thresholds.as_deref()),
        Command::Train(args) => train(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
