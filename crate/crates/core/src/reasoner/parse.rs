//! Completion parsing: think block, structured record, repair ladder.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::chainlang::{chain_to_value, parse_chain_value};
use crate::domain::{AgentOutput, ProactiveScore, ToolChain};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "value", rename_all = "snake_case")]
pub enum ParseFailure {
    NoScore,
    ScoreOutOfRange(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Repaired(Vec<String>),
    Failed(ParseFailure),
}

impl ParseStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, ParseStatus::Failed(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            ParseStatus::Clean => "clean",
            ParseStatus::Repaired(_) => "repaired",
            ParseStatus::Failed(_) => "failed",
        }
    }
}

/// The decoded record, before core invariants are enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub score: i64,
    /// The chain in wire form (`"None"` or an array of records).
    pub tools: Value,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedOutput {
    pub thought: Option<String>,
    /// Present unless the status is `Failed`.
    pub output: Option<AgentOutput>,
    pub status: ParseStatus,
}

impl ParsedOutput {
    /// The output, or the conservative passive fallback on failure.
    pub fn output_or_fallback(&self) -> AgentOutput {
        self.output
            .clone()
            .unwrap_or_else(|| AgentOutput::passive(self.thought.clone()))
    }
}

/// Splits off the first think block. Returns (thought, remainder).
fn split_think(completion: &str, notes: &mut Vec<String>) -> (Option<String>, String) {
    let open = completion.find(THINK_OPEN);
    let close = completion.find(THINK_CLOSE);
    match (open, close) {
        (Some(o), Some(c)) if c > o => {
            let thought = completion[o + THINK_OPEN.len()..c].trim();
            let rest = format!("{}{}", &completion[..o], &completion[c + THINK_CLOSE.len()..]);
            (non_empty(thought), rest)
        }
        (None, Some(c)) => {
            notes.push("think block has no opening tag".into());
            (
                non_empty(completion[..c].trim()),
                completion[c + THINK_CLOSE.len()..].to_owned(),
            )
        }
        (Some(o), _) => {
            // Unclosed: the record, if any, is still searched for inside.
            notes.push("think block is not closed".into());
            let body = &completion[o + THINK_OPEN.len()..];
            let thought = match body.find('{') {
                Some(b) => body[..b].trim(),
                None => body.trim(),
            };
            (non_empty(thought), body.to_owned())
        }
        (None, None) => (None, completion.to_owned()),
    }
}

fn non_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_owned())
}

fn normalize_key(k: &str) -> String {
    k.trim()
        .chars()
        .map(|c| {
            if c == ' ' || c == '-' {
                '_'
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect()
}

fn get<'a>(obj: &'a Map<String, Value>, aliases: &[&str]) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| aliases.contains(&normalize_key(k).as_str()))
        .map(|(_, v)| v)
}

const SCORE_KEYS: &[&str] = &["proactive_score", "score", "proactivescore"];
const TOOLS_KEYS: &[&str] = &["tools", "tool_chain", "toolchain"];
const RESPONSE_KEYS: &[&str] = &["response", "final_response"];

fn score_of(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn is_record(v: &Value) -> bool {
    v.as_object().is_some_and(|o| get(o, SCORE_KEYS).is_some())
}

fn strip_fences(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // Skip a language tag on the opening fence line.
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(body[..end].trim())
}

fn first_record(text: &str) -> Option<Value> {
    text.match_indices('{').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&text[i..])
            .into_iter::<Value>()
            .next()
            .and_then(Result::ok)
            .filter(is_record)
    })
}

static SCORE_TEXT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)(?:proactive[ _]?)?score["']?\s*[:=]\s*["']?(-?\d+)"#).expect("valid regex"));

/// Locates the record in `text`, climbing the repair ladder as needed.
fn locate_record(text: &str, notes: &mut Vec<String>) -> Option<Payload> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if is_record(&v) {
            return payload(&v);
        }
    }
    if let Some(inner) = strip_fences(trimmed) {
        if let Ok(v) = serde_json::from_str::<Value>(inner) {
            if is_record(&v) {
                notes.push("removed code fence".into());
                return payload(&v);
            }
        }
    }
    if let Some(v) = first_record(trimmed) {
        notes.push("record extracted from surrounding text".into());
        return payload(&v);
    }
    let caps = SCORE_TEXT.captures(trimmed)?;
    let score = caps[1].parse().ok()?;
    notes.push("score recovered from prose; no tools or response".into());
    Some(Payload {
        score,
        tools: Value::String("None".into()),
        response: None,
    })
}

fn payload(v: &Value) -> Option<Payload> {
    let obj = v.as_object()?;
    let score = get(obj, SCORE_KEYS).and_then(score_of)?;
    let tools = get(obj, TOOLS_KEYS).cloned().unwrap_or(Value::Null);
    let response = match get(obj, RESPONSE_KEYS) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => {
            let s = s.trim();
            (!s.is_empty() && s != "None").then(|| s.to_owned())
        }
        Some(other) => Some(other.to_string()),
    };
    Some(Payload { score, tools, response })
}

/// Parses a model completion. Never fails outright: unrecoverable input is
/// reported through [`ParseStatus::Failed`].
pub fn parse_output(completion: &str) -> ParsedOutput {
    let mut notes = Vec::new();
    let (thought, rest) = split_think(completion, &mut notes);

    let failed = |thought, reason| ParsedOutput {
        thought,
        output: None,
        status: ParseStatus::Failed(reason),
    };
    let Some(payload) = locate_record(&rest, &mut notes) else {
        return failed(thought, ParseFailure::NoScore);
    };
    let Ok(score) = ProactiveScore::new(payload.score) else {
        return failed(thought, ParseFailure::ScoreOutOfRange(payload.score));
    };

    let mut chain = match parse_chain_value(&payload.tools) {
        Ok(c) => c,
        Err(e) => {
            notes.push(format!("tools dropped: {e}"));
            ToolChain::empty()
        }
    };
    let mut response = payload.response;
    if score.is_passive() && (!chain.is_empty() || response.is_some()) {
        notes.push(format!("score {score} is passive; tools and response dropped"));
        chain = ToolChain::empty();
        response = None;
    }

    let output = AgentOutput::new(thought.clone(), score, chain, response).expect("passive payloads were coerced");
    let status = if notes.is_empty() {
        ParseStatus::Clean
    } else {
        ParseStatus::Repaired(notes)
    };
    ParsedOutput {
        thought,
        output: Some(output),
        status,
    }
}

/// Renders an output in the canonical completion format, which
/// [`parse_output`] reads back unchanged.
pub fn canonical_completion(output: &AgentOutput) -> String {
    let tools = if output.chain().is_empty() {
        Value::String("None".into())
    } else {
        chain_to_value(output.chain())
    };
    let mut record = Map::new();
    record.insert("proactive_score".into(), Value::from(output.score().value()));
    record.insert("tools".into(), tools);
    record.insert(
        "response".into(),
        Value::String(output.response().unwrap_or("None").to_owned()),
    );
    let record = Value::Object(record).to_string();
    match output.thought() {
        Some(t) => format!("{THINK_OPEN}{t}{THINK_CLOSE}\n{record}"),
        None => record,
    }
}
