//! `run` and `infer`: the reasoner over a dataset or a single sample.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ctxagent::chainlang::serialize_chain_lenient;
use ctxagent::dataset::Dataset;
use ctxagent::evalsuite::PredictionSet;
use ctxagent::par::{self, Execution};
use ctxagent::reasoner::{connect, render_trace, BackendError, Reasoner, SampleRun};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{write_file, CliError, Format};

fn backend_error(e: BackendError) -> CliError {
    CliError::Fatal(e.to_string())
}

fn reasoner(cfg: &RunConfig) -> Result<Reasoner, CliError> {
    let backend = connect(&cfg.backend).map_err(backend_error)?;
    let mut reasoner = Reasoner::new(backend, cfg.registry()?, cfg.world()?, cfg.gate());
    if let Some(s) = &cfg.synthesis {
        reasoner = reasoner.with_synthesis(connect(s).map_err(backend_error)?);
    }
    Ok(reasoner)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::Fatal(e.to_string()))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct RunSummary {
    samples: usize,
    proactive: usize,
    prediction_failures: usize,
    backend_errors: usize,
    aborted_traces: usize,
    template_responses: usize,
}

impl RunSummary {
    fn of(runs: &[SampleRun]) -> Self {
        Self {
            samples: runs.len(),
            proactive: runs.iter().filter(|r| r.trace.is_some()).count(),
            prediction_failures: runs.iter().filter(|r| r.prediction_failure).count(),
            backend_errors: runs.iter().filter(|r| r.backend_error.is_some()).count(),
            aborted_traces: runs
                .iter()
                .filter(|r| r.trace.as_ref().is_some_and(|t| !t.is_completed()))
                .count(),
            template_responses: runs
                .iter()
                .filter(|r| r.response_source == Some(ctxagent::reasoner::ResponseSource::Template))
                .count(),
        }
    }
}

/// Output layout under the run directory:
///
/// ```text
/// predictions/predictions.jsonl   one prediction per sample
/// traces/traces.jsonl             {"id", "trace"} for every executed chain
/// reports/samples.jsonl           the full per-sample run record
/// reports/run.json                {"header": timings, "config", "summary"}
/// reports/timings.jsonl           {"id", "elapsed_ms"} per sample
/// ```
///
/// Everything except `header` and `timings.jsonl` is a pure function of the
/// inputs.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::Fatal("no output directory given (--output or `output` in the config)".into()))?;
    let dataset = load_dataset(&cfg.dataset)?;
    let reasoner = reasoner(cfg)?;
    let samples = dataset.to_samples();

    let started_at = chrono::Utc::now();
    let clock = Instant::now();
    let timed = par::map(Execution::with_workers(cfg.parallelism), &samples, |s| {
        let t = Instant::now();
        let run = reasoner.run_sample(s);
        (run, t.elapsed().as_secs_f64() * 1e3)
    });
    let elapsed_ms = clock.elapsed().as_secs_f64() * 1e3;
    let (runs, times): (Vec<SampleRun>, Vec<f64>) = timed.into_iter().unzip();

    let preds = PredictionSet::from_runs(&runs).map_err(|e| CliError::Fatal(e.to_string()))?;
    let summary = RunSummary::of(&runs);
    let header = json!({
        "started_at": started_at.to_rfc3339(),
        "elapsed_ms": elapsed_ms,
    });
    let report = json!({"header": header, "config": cfg, "summary": summary});

    write_file(
        &out.join("predictions/predictions.jsonl"),
        &preds.to_jsonl(reasoner.registry()),
    )?;
    write_file(
        &out.join("traces/traces.jsonl"),
        &jsonl(
            runs.iter()
                .filter_map(|r| r.trace.as_ref().map(|t| json!({"id": r.id, "trace": t}))),
        ),
    )?;
    write_file(&out.join("reports/samples.jsonl"), &jsonl(&runs))?;
    write_file(
        &out.join("reports/timings.jsonl"),
        &jsonl(
            runs.iter()
                .zip(&times)
                .map(|(r, t)| json!({"id": r.id, "elapsed_ms": t})),
        ),
    )?;
    write_file(
        &out.join("reports/run.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;

    println!(
        "{} sample(s): {} proactive, {} prediction failure(s), {} backend error(s); wrote {}",
        summary.samples,
        summary.proactive,
        summary.prediction_failures,
        summary.backend_errors,
        out.display()
    );
    Ok(())
}

pub fn infer(cfg: &RunConfig, id: &str, format: Format) -> Result<(), CliError> {
    let dataset = load_dataset(&cfg.dataset)?;
    let sample = dataset
        .samples()
        .find(|s| s.id == id)
        .ok_or_else(|| CliError::Fatal(format!("no sample with id {id:?} in {}", cfg.dataset.display())))?;
    let reasoner = reasoner(cfg)?;
    let run = reasoner.run_sample(sample);
    match format {
        Format::Records => println!("{}", serde_json::to_string_pretty(&run).expect("run serializes")),
        Format::Table => print!("{}", pretty(&run, &reasoner)),
    }
    Ok(())
}

fn pretty(run: &SampleRun, reasoner: &Reasoner) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "sample:   {}", run.id);
    let _ = writeln!(s, "parse:    {}", run.parse_status.label());
    if let Some(e) = &run.backend_error {
        let _ = writeln!(s, "backend:  {e}");
    }
    let _ = writeln!(s, "thought:  {}", run.output.thought().unwrap_or("-"));
    let _ = writeln!(
        s,
        "score:    {} (gate {}, {})",
        run.output.score(),
        reasoner.gate().threshold(),
        if run.trace.is_some() { "proactive" } else { "passive" }
    );
    let chain = run.output.chain();
    let chain = if chain.is_empty() {
        "None".to_owned()
    } else {
        serialize_chain_lenient(chain, reasoner.registry())
    };
    let _ = writeln!(s, "chain:    {chain}");
    for d in &run.chain_diagnostics {
        let _ = writeln!(s, "  warning: call {}: {}", d.call, d.issue.kind());
    }
    if let Some(trace) = &run.trace {
        let _ = writeln!(s, "trace:    {} step(s)", trace.steps.len());
        for line in render_trace(trace).lines() {
            let _ = writeln!(s, "  {line}");
        }
    }
    if let Some(r) = &run.final_response {
        let _ = writeln!(s, "response: {r}");
    }
    s
}
