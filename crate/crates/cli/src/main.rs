//! `ctxagent`: validate, split, run, evaluate, generate and export
//! benchmark data for context-aware proactive agents.
//!
//! Exit codes: 0 success, 1 findings (diagnostics, id mismatch, short
//! generation run), 2 usage, configuration or I/O errors.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxagent::dataset::{
    export_sft, generate, load_personas, split, stats, validate_file, write_sft, Dataset, DatasetError, GenerationJob,
    SplitMode, Strategy,
};
use ctxagent::domain::{GateConfig, ProactiveScore};
use ctxagent::evalsuite::{evaluate, ArgsGranularity, Averaging, EvalError, EvalOptions, PredictionSet};
use ctxagent::par::Execution;
use ctxagent::reasoner::{connect, ground_truth_transcript, BackendConfig, TranscriptEntry};
use serde_json::json;

use config::{load_registry, BackendArgs, RunArgs, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// The command ran and found problems (exit 1).
    Findings(String),
    /// The command could not run (exit 2).
    Fatal(String),
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Invalid { .. } => CliError::Findings(e.to_string()),
            _ => CliError::Fatal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::IdMismatch { .. } => CliError::Findings(e.to_string()),
            _ => CliError::Fatal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Human-readable table.
    #[default]
    Table,
    /// Machine-readable JSON.
    Records,
}

/// Creates parent directories, then writes the whole file at once.
pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Fatal(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "ctxagent",
    version,
    about = "Context-aware proactive agent runtime and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset file; exit 1 when any sample has a diagnostic.
    Validate(ValidateArgs),
    /// Split a dataset into train and test files.
    Split(SplitArgs),
    /// Run the agent over a dataset and write predictions, traces and reports.
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Output directory.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Generate new samples with a text-generation backend.
    Gen(GenArgs),
    /// Export a validated dataset as fine-tuning records.
    ExportSft(ExportArgs),
    /// Print dataset distribution counts.
    Stats(StatsArgs),
    /// Run the agent on one sample and print every stage.
    Infer {
        #[command(flatten)]
        args: RunArgs,
        /// Sample id.
        #[arg(long)]
        id: String,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// List the tool registry.
    Tools {
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Write a replay transcript that answers with the dataset's own annotations.
    Transcript(TranscriptArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    dataset: PathBuf,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["ratio", "hold_out"]))]
struct SplitArgs {
    dataset: PathBuf,
    /// Fraction of samples for the train file.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0, requires = "ratio")]
    seed: u64,
    /// Scenario to hold out of train (repeatable).
    #[arg(long = "hold-out", value_name = "SCENARIO")]
    hold_out: Vec<String>,
    /// Directory for train.jsonl and test.jsonl.
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Sample,
    Tool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Prediction file (one JSON line per sample).
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Scores at or above this count as proactive.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(i64).range(2..=5))]
    boundary: i64,
    #[arg(long, value_enum, default_value = "macro")]
    averaging: AveragingArg,
    #[arg(long, value_enum, default_value = "sample")]
    args_granularity: GranularityArg,
    /// Add a breakdown by ground-truth chain length.
    #[arg(long)]
    levels: bool,
    /// Also write the JSON report here.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, short = 'j', default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: u64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("strategy").required(true).args(["scenario", "score"]))]
struct GenArgs {
    /// Dataset whose samples seed the prompts.
    #[arg(long)]
    exemplars: PathBuf,
    /// Persona pool, one per line.
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Generate samples of this scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Generate samples with exactly this score.
    #[arg(long, value_parser = clap::value_parser!(i64).range(1..=5))]
    score: Option<i64>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples requested per backend call.
    #[arg(long, default_value_t = 5)]
    per_request: usize,
    /// Maximum backend calls (default: five per requested sample).
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, short = 'j', default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: u64,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Backend settings (TOML with the fields of a `[backend]` table).
    #[arg(long)]
    backend_config: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Accepted samples are written here.
    #[arg(long, short)]
    out: PathBuf,
    /// Rejected candidates and reasons are written here.
    #[arg(long)]
    rejections: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    dataset: PathBuf,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Debug, Args)]
struct TranscriptArgs {
    dataset: PathBuf,
    /// Also answer final-response requests with the annotated response.
    #[arg(long)]
    responses: bool,
    #[arg(long, short)]
    out: PathBuf,
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    Ok(Dataset::load(path)?)
}

fn cmd_validate(a: &ValidateArgs) -> Result<(), CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let report = validate_file(&a.dataset, &registry)?;
    match a.format {
        Format::Table => print!("{}", report.render()),
        Format::Records => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Findings(format!(
            "{} of {} sample(s) failed validation",
            report.failed, report.total
        )))
    }
}

fn cmd_split(a: &SplitArgs) -> Result<(), CliError> {
    let dataset = load(&a.dataset)?;
    let mode = match a.ratio {
        Some(train_fraction) => SplitMode::RandomRatio {
            train_fraction,
            seed: a.seed,
        },
        None => SplitMode::ScenarioHoldout {
            held_out: a.hold_out.clone(),
        },
    };
    let (train, test) = split(&dataset, &mode)?;
    train.save(&a.out_dir.join("train.jsonl"))?;
    test.save(&a.out_dir.join("test.jsonl"))?;
    println!(
        "train: {}, test: {} (wrote {})",
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let dataset = load(&a.dataset)?;
    let preds = PredictionSet::load(&a.predictions)?;
    let opts = EvalOptions {
        boundary: GateConfig::new(a.boundary).map_err(|e| CliError::Fatal(e.to_string()))?,
        averaging: match a.averaging {
            AveragingArg::Macro => Averaging::Macro,
            AveragingArg::Micro => Averaging::Micro,
        },
        args: match a.args_granularity {
            GranularityArg::Sample => ArgsGranularity::Sample,
            GranularityArg::Tool => ArgsGranularity::Tool,
        },
        levels: a.levels,
    };
    let report = evaluate(
        &preds,
        &dataset.to_samples(),
        &opts,
        Execution::with_workers(a.parallelism as usize),
    )?;
    let json = report.to_json() + "\n";
    if let Some(out) = &a.output {
        write_file(out, &json)?;
    }
    match a.format {
        Format::Table => print!("{}", report.render_table()),
        Format::Records => print!("{json}"),
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let base = match &a.backend_config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))?;
            let cfg: BackendConfig =
                toml::from_str(&text).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))?;
            Some(cfg.relative_to(path.parent().unwrap_or(Path::new(""))))
        }
        None => None,
    };
    let backend_cfg = a.backend.apply(base).ok_or_else(|| {
        CliError::Fatal("no backend given (--transcript, --stub, --endpoint or --backend-config)".into())
    })?;
    let backend = connect(&backend_cfg).map_err(|e| CliError::Fatal(e.to_string()))?;

    let pool = load(&a.exemplars)?;
    let personas = match &a.personas {
        Some(p) => load_personas(p)?,
        None => Vec::new(),
    };
    let strategy = match (&a.scenario, a.score) {
        (Some(s), _) => Strategy::ScenarioAware(s.clone()),
        (None, Some(v)) => Strategy::ScoreAware(ProactiveScore::new(v).map_err(|e| CliError::Fatal(e.to_string()))?),
        (None, None) => unreachable!("clap requires a strategy"),
    };
    let exemplars = pool.entries.iter().map(|e| e.record.clone()).collect();
    let mut job = GenerationJob::new(strategy, exemplars, personas, a.count, a.seed)?;
    job.per_request = a.per_request.max(1);
    job.budget = a.budget;
    job.parallelism = Execution::with_workers(a.parallelism as usize);

    let report = generate(&job, backend.as_ref(), &registry);
    Dataset::new(pool.header.clone(), report.accepted.clone()).save(&a.out)?;
    if let Some(path) = &a.rejections {
        let mut text = String::new();
        for r in &report.rejected {
            text.push_str(&serde_json::to_string(r).expect("rejection serializes"));
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    println!(
        "accepted {} of {} requested, rejected {}, {} backend call(s); stop: {}",
        report.accepted.len(),
        a.count,
        report.rejected.len(),
        report.attempts,
        serde_json::to_string(&report.stop).expect("stop serializes")
    );
    report.check().map_err(|e| CliError::Findings(e.to_string()))
}

fn cmd_export(a: &ExportArgs) -> Result<(), CliError> {
    let registry = load_registry(a.registry.as_deref())?;
    let records = export_sft(&load(&a.dataset)?, &registry)?;
    write_sft(&records, &a.out)?;
    println!("wrote {} record(s) to {}", records.len(), a.out.display());
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let st = stats(&load(&a.dataset)?);
    match a.format {
        Format::Table => print!("{}", st.render()),
        Format::Records => println!("{}", serde_json::to_string_pretty(&st).expect("stats serialize")),
    }
    Ok(())
}

fn cmd_tools(registry: Option<&Path>, format: Format) -> Result<(), CliError> {
    let registry = load_registry(registry)?;
    match format {
        Format::Records => {
            for t in registry.iter() {
                println!("{}", serde_json::to_string(t).expect("descriptor serializes"));
            }
        }
        Format::Table => {
            let rows: Vec<[String; 3]> = registry
                .iter()
                .map(|t| {
                    let params: Vec<String> = t
                        .params
                        .iter()
                        .map(|p| {
                            if p.required {
                                p.name.clone()
                            } else {
                                format!("{}?", p.name)
                            }
                        })
                        .collect();
                    [t.name.clone(), params.join(", "), t.output_fields.join(", ")]
                })
                .collect();
            let header = ["tool".to_owned(), "params".to_owned(), "outputs".to_owned()];
            let w: Vec<usize> = (0..2)
                .map(|i| rows.iter().chain([&header]).map(|r| r[i].len()).max().unwrap_or(0))
                .collect();
            for r in std::iter::once(&header).chain(&rows) {
                println!("{:<w0$}  {:<w1$}  {}", r[0], r[1], r[2], w0 = w[0], w1 = w[1]);
            }
        }
    }
    Ok(())
}

fn cmd_transcript(a: &TranscriptArgs) -> Result<(), CliError> {
    let samples = load(&a.dataset)?.to_samples();
    let mut entries = ground_truth_transcript(&samples);
    if a.responses {
        entries.extend(samples.iter().filter_map(|s| {
            s.annotation.response().map(|r| TranscriptEntry {
                id: Some(format!("{}#response", s.id)),
                prompt_sha256: None,
                completion: r.to_owned(),
            })
        }));
    }
    let mut text = String::new();
    for e in &entries {
        text.push_str(&json!(e).to_string());
        text.push('\n');
    }
    write_file(&a.out, &text)?;
    println!("wrote {} entr(ies) to {}", entries.len(), a.out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Run { args, output } => run::run(&RunConfig::load(&args, output)?),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::ExportSft(a) => cmd_export(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Infer { args, id, format } => run::infer(&RunConfig::load(&args, None)?, &id, format),
        Command::Tools { registry, format } => cmd_tools(registry.as_deref(), format),
        Command::Transcript(a) => cmd_transcript(&a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Findings(msg)) => {
            eprintln!("ctxagent: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Fatal(msg)) => {
            eprintln!("ctxagent: error: {msg}");
            ExitCode::from(2)
        }
    }
}
