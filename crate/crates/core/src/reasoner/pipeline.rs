//! One sample end to end: prompt, generate, parse, gate, execute, respond.

use serde::{Deserialize, Serialize};

use super::backend::{BackendKind, GenerationRequest, TextBackend, TranscriptEntry};
use super::parse::{canonical_completion, parse_output, ParseStatus};
use super::prompt::{build_runtime_prompt, build_static_prompt, build_synthesis_prompt};
use crate::chainlang::{validate_chain, ChainDiagnostic};
use crate::domain::{needs_proactive, AgentOutput, BenchmarkSample, GateConfig};
use crate::executor::{execute, ExecutionTrace, StepOutcome};
use crate::par::{self, Execution};
use crate::toolset::{ToolRegistry, WorldFixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Backend,
    Template,
}

/// Everything `run_sample` learned about one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRun {
    pub id: String,
    pub output: AgentOutput,
    pub parse_status: ParseStatus,
    /// True when the output is the passive fallback for a failed generation
    /// or parse.
    pub prediction_failure: bool,
    pub backend_error: Option<String>,
    pub completion: Option<String>,
    pub chain_diagnostics: Vec<ChainDiagnostic>,
    pub trace: Option<ExecutionTrace>,
    pub final_response: Option<String>,
    pub response_source: Option<ResponseSource>,
    pub synthesis_error: Option<String>,
}

pub struct Reasoner {
    backend: Box<dyn TextBackend>,
    synthesis: Option<Box<dyn TextBackend>>,
    registry: ToolRegistry,
    fixture: WorldFixture,
    gate: GateConfig,
    static_prompt: String,
}

impl Reasoner {
    pub fn new(backend: Box<dyn TextBackend>, registry: ToolRegistry, fixture: WorldFixture, gate: GateConfig) -> Self {
        let static_prompt = build_static_prompt(&registry);
        Self {
            backend,
            synthesis: None,
            registry,
            fixture,
            gate,
            static_prompt,
        }
    }

    /// Uses a separate backend for final-response synthesis.
    pub fn with_synthesis(mut self, backend: Box<dyn TextBackend>) -> Self {
        self.synthesis = Some(backend);
        self
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn gate(&self) -> GateConfig {
        self.gate
    }

    pub fn static_prompt(&self) -> &str {
        &self.static_prompt
    }

    pub fn run_sample(&self, sample: &BenchmarkSample) -> SampleRun {
        let runtime = build_runtime_prompt(&sample.context, &sample.personas);
        let request = GenerationRequest {
            key: &sample.id,
            system: Some(&self.static_prompt),
            user: &runtime,
        };
        let mut run = SampleRun {
            id: sample.id.clone(),
            output: AgentOutput::passive(None),
            parse_status: ParseStatus::Clean,
            prediction_failure: false,
            backend_error: None,
            completion: None,
            chain_diagnostics: Vec::new(),
            trace: None,
            final_response: None,
            response_source: None,
            synthesis_error: None,
        };

        let completion = match self.backend.generate(&request) {
            Ok(c) => c,
            Err(e) => {
                run.prediction_failure = true;
                run.backend_error = Some(e.to_string());
                return run;
            }
        };
        let parsed = parse_output(&completion);
        run.completion = Some(completion);
        run.output = parsed.output_or_fallback();
        run.prediction_failure = parsed.status.is_failed();
        run.parse_status = parsed.status;

        if !needs_proactive(run.output.score(), self.gate) {
            return run;
        }
        run.chain_diagnostics = validate_chain(run.output.chain(), &self.registry);
        let trace = execute(run.output.chain(), &self.registry, &self.fixture);
        let (response, source, err) = self.synthesize(sample, &run.output, &trace);
        run.trace = Some(trace);
        run.final_response = Some(response);
        run.response_source = Some(source);
        run.synthesis_error = err;
        run
    }

    fn synthesize(
        &self,
        sample: &BenchmarkSample,
        output: &AgentOutput,
        trace: &ExecutionTrace,
    ) -> (String, ResponseSource, Option<String>) {
        let backend = self.synthesis.as_deref().unwrap_or(self.backend.as_ref());
        let template = || template_response(output, trace, &self.registry);
        if backend.kind() == BackendKind::FixedStub {
            return (template(), ResponseSource::Template, None);
        }
        let prompt = build_synthesis_prompt(&sample.context, &sample.personas, output.thought(), trace);
        let key = format!("{}#response", sample.id);
        let request = GenerationRequest {
            key: &key,
            system: Some(&prompt.static_part),
            user: &prompt.runtime_part,
        };
        match backend.generate(&request) {
            Ok(text) if !text.trim().is_empty() => (text.trim().to_owned(), ResponseSource::Backend, None),
            Ok(_) => (template(), ResponseSource::Template, Some("empty completion".into())),
            Err(e) => (template(), ResponseSource::Template, Some(e.to_string())),
        }
    }

    /// Runs every sample; results are in input order regardless of `mode`.
    pub fn run_all(&self, samples: &[BenchmarkSample], mode: Execution) -> Vec<SampleRun> {
        par::map(mode, samples, |s| self.run_sample(s))
    }
}

/// Deterministic final response built from the model's draft response and
/// the tool results.
pub fn template_response(output: &AgentOutput, trace: &ExecutionTrace, registry: &ToolRegistry) -> String {
    let mut lines = Vec::new();
    if let Some(r) = output.response() {
        lines.push(r.to_owned());
    }
    for step in &trace.steps {
        let label = registry
            .lookup(&step.tool)
            .ok()
            .and_then(|d| d.display_name.clone())
            .unwrap_or_else(|| step.tool.clone());
        match &step.outcome {
            StepOutcome::Ok(result) => lines.push(format!("- {label}: {}", result.text())),
            StepOutcome::Error(e) => lines.push(format!("- {label}: unavailable ({e})")),
        }
    }
    if lines.is_empty() {
        "I noticed something I may be able to help with. Let me know if you need assistance.".into()
    } else {
        lines.join("\n")
    }
}

/// Replay transcript whose completions are the samples' own annotations.
pub fn ground_truth_transcript(samples: &[BenchmarkSample]) -> Vec<TranscriptEntry> {
    samples
        .iter()
        .map(|s| TranscriptEntry {
            id: Some(s.id.clone()),
            prompt_sha256: None,
            completion: canonical_completion(&s.annotation),
        })
        .collect()
}
