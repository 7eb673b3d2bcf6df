use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DatasetEntry, DatasetHeader};
use crate::chainlang::{parse_chain, serialize_chain_lenient, ChainIssue};
use crate::domain::{AgentOutput, BenchmarkSample, ContextBundle, PersonaSet, ProactiveScore};
use crate::toolset::ToolRegistry;

const NONE: &str = "None";

/// One dataset line, with the exact field names of the published records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    #[serde(rename = "Id", default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(rename = "Context information")]
    pub context: String,
    #[serde(rename = "Personas")]
    pub personas: Vec<String>,
    #[serde(rename = "Thoughts")]
    pub thoughts: String,
    #[serde(rename = "Proactive score")]
    pub score: i64,
    #[serde(rename = "Tools")]
    pub tools: String,
    #[serde(rename = "Response")]
    pub response: String,
    #[serde(rename = "Scenario", default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(rename = "Media", default, skip_serializing_if = "Vec::is_empty")]
    pub media: Vec<String>,
}

impl SampleRecord {
    pub fn from_sample(sample: &BenchmarkSample, registry: &ToolRegistry) -> Self {
        let a = &sample.annotation;
        let tools = if a.chain().is_empty() {
            NONE.to_owned()
        } else {
            serialize_chain_lenient(a.chain(), registry)
        };
        Self {
            id: Some(sample.id.clone()),
            context: sample.context.combined.clone(),
            personas: sample.personas.entries().to_vec(),
            thoughts: a.thought().unwrap_or_default().to_owned(),
            score: a.score().value().into(),
            tools,
            response: a.response().unwrap_or(NONE).to_owned(),
            scenario: sample.scenario.clone(),
            media: sample.media.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Schema,
    EmptyContext,
    BlankPersona,
    ScoreOutOfRange,
    ToolsOnPassiveScore,
    ResponseOnPassiveScore,
    MissingTools,
    MissingResponse,
    MalformedReference,
    ToolsDecode,
    UnknownScenario,
    DuplicateId,
    MissingMedia,
    UnknownTool,
    MissingParam,
    UnknownParam,
    ForwardReference,
    DanglingReference,
    UnknownField,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Schema => "schema",
            DiagnosticKind::EmptyContext => "empty_context",
            DiagnosticKind::BlankPersona => "blank_persona",
            DiagnosticKind::ScoreOutOfRange => "score_out_of_range",
            DiagnosticKind::ToolsOnPassiveScore => "tools_on_passive_score",
            DiagnosticKind::ResponseOnPassiveScore => "response_on_passive_score",
            DiagnosticKind::MissingTools => "missing_tools",
            DiagnosticKind::MissingResponse => "missing_response",
            DiagnosticKind::MalformedReference => "malformed_reference",
            DiagnosticKind::ToolsDecode => "tools_decode",
            DiagnosticKind::UnknownScenario => "unknown_scenario",
            DiagnosticKind::DuplicateId => "duplicate_id",
            DiagnosticKind::MissingMedia => "missing_media",
            DiagnosticKind::UnknownTool => "unknown_tool",
            DiagnosticKind::MissingParam => "missing_param",
            DiagnosticKind::UnknownParam => "unknown_param",
            DiagnosticKind::ForwardReference => "forward_reference",
            DiagnosticKind::DanglingReference => "dangling_reference",
            DiagnosticKind::UnknownField => "unknown_field",
        }
    }

    pub(crate) fn of_chain_issue(issue: &ChainIssue) -> Self {
        match issue {
            ChainIssue::UnknownTool { .. } => DiagnosticKind::UnknownTool,
            ChainIssue::MissingParam { .. } => DiagnosticKind::MissingParam,
            ChainIssue::UnknownParam { .. } => DiagnosticKind::UnknownParam,
            ChainIssue::ForwardReference { .. } => DiagnosticKind::ForwardReference,
            ChainIssue::DanglingReference { .. } => DiagnosticKind::DanglingReference,
            ChainIssue::UnknownField { .. } => DiagnosticKind::UnknownField,
        }
    }
}

impl std::fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordDiagnostic {
    pub kind: DiagnosticKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'static str>,
    /// Index of the offending call, for chain diagnostics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub call: Option<usize>,
    pub message: String,
}

impl RecordDiagnostic {
    pub(crate) fn new(kind: DiagnosticKind, field: Option<&'static str>, message: impl Into<String>) -> Self {
        Self {
            kind,
            field,
            call: None,
            message: message.into(),
        }
    }
}

fn none_text(s: &str) -> bool {
    s.trim() == NONE
}

/// Decodes one record value. Every schema-level problem is reported, not
/// just the first; chain semantics are left to validation.
pub(crate) fn decode(
    index: usize,
    value: &Value,
    header: Option<&DatasetHeader>,
) -> Result<DatasetEntry, Vec<RecordDiagnostic>> {
    use DiagnosticKind as K;
    let mut record: SampleRecord = serde_json::from_value(value.clone())
        .map_err(|e| vec![RecordDiagnostic::new(K::Schema, None, e.to_string())])?;
    let mut diags = Vec::new();
    let mut push = |kind, field, msg: String| diags.push(RecordDiagnostic::new(kind, Some(field), msg));

    if record.context.trim().is_empty() {
        push(K::EmptyContext, "Context information", "context is empty".into());
    }
    let personas = PersonaSet::new(record.personas.clone());
    if let Err(e) = &personas {
        push(K::BlankPersona, "Personas", e.to_string());
    }
    let score = ProactiveScore::new(record.score);
    if let Err(e) = &score {
        push(K::ScoreOutOfRange, "Proactive score", e.to_string());
    }
    let chain = parse_chain(&record.tools);
    match &chain {
        Err(e) if e.is_malformed_reference() => push(K::MalformedReference, "Tools", e.to_string()),
        Err(e) => push(K::ToolsDecode, "Tools", e.to_string()),
        Ok(_) => {}
    }
    let response = (!none_text(&record.response)).then(|| record.response.clone());

    if let Ok(score) = score {
        if score.is_passive() {
            if chain.as_ref().is_ok_and(|c| !c.is_empty()) {
                push(
                    K::ToolsOnPassiveScore,
                    "Tools",
                    format!("score {score} needs no proactivity, so Tools must be \"None\""),
                );
            }
            if response.is_some() {
                push(
                    K::ResponseOnPassiveScore,
                    "Response",
                    format!("score {score} needs no proactivity, so Response must be \"None\""),
                );
            }
        } else {
            if chain.as_ref().is_ok_and(|c| c.is_empty()) {
                push(K::MissingTools, "Tools", format!("score {score} requires a tool chain"));
            }
            if response.is_none() {
                push(
                    K::MissingResponse,
                    "Response",
                    format!("score {score} requires a response"),
                );
            }
        }
    }
    if let (Some(h), Some(s)) = (header, &record.scenario) {
        if !h.scenarios.contains(s) {
            push(
                K::UnknownScenario,
                "Scenario",
                format!("scenario {s:?} is not declared in the header"),
            );
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let id = record.id.clone().unwrap_or_else(|| format!("sample-{}", index + 1));
    record.id = Some(id.clone());
    let thought = Some(record.thoughts.trim())
        .filter(|t| !t.is_empty())
        .map(str::to_owned);
    let annotation = AgentOutput::new(thought, score.expect("checked"), chain.expect("checked"), response)
        .expect("passive consistency checked");
    let sample = BenchmarkSample {
        id,
        context: ContextBundle::from_combined(record.context.clone()),
        personas: personas.expect("checked"),
        annotation,
        scenario: record.scenario.clone(),
        media: record.media.clone(),
    };
    Ok(DatasetEntry { record, sample })
}
