//! The tool-chain wire format.
//!
//! A chain is written either as the literal `None` or as a JSON array of
//! `{"name", "desc", "params"}` records, where `params` is `"None"` or an
//! object of string arguments. An argument whose entire value is
//! `$RESULT(tool.field)` refers to a field of an earlier tool's result.
//!
//! ```text
//! [{"name": "get_current_gps_coordinates", "desc": "...", "params": "None"},
//!  {"name": "get_city_weather", "desc": "...",
//!   "params": {"city": "$RESULT(get_current_gps_coordinates.city)", "time": "now"}}]
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{is_identifier, ArgExpr, ToolCall, ToolChain};
use crate::toolset::{validate_args, ArgViolation, ToolRegistry};

const REF_OPEN: &str = "$RESULT(";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("malformed reference {text:?}: {reason}")]
    MalformedReference { text: String, reason: &'static str },
    #[error("call {call}, param {param:?}: {source}")]
    InArgument {
        call: usize,
        param: String,
        #[source]
        source: Box<ChainError>,
    },
    #[error("cannot decode tool chain{}: {message}", at.map(|i| format!(" (call {i})")).unwrap_or_default())]
    Decode { at: Option<usize>, message: String },
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
}

impl ChainError {
    fn decode(at: Option<usize>, message: impl Into<String>) -> Self {
        ChainError::Decode {
            at,
            message: message.into(),
        }
    }

    /// True for reference-grammar errors, wherever they were raised.
    pub fn is_malformed_reference(&self) -> bool {
        match self {
            ChainError::MalformedReference { .. } => true,
            ChainError::InArgument { source, .. } => source.is_malformed_reference(),
            _ => false,
        }
    }
}

/// Classifies one argument value. Only text starting with `$RESULT(` can fail.
pub fn parse_arg(value: &str) -> Result<ArgExpr, ChainError> {
    let Some(rest) = value.strip_prefix(REF_OPEN) else {
        return Ok(ArgExpr::Literal(value.to_owned()));
    };
    let malformed = |reason| ChainError::MalformedReference {
        text: value.to_owned(),
        reason,
    };
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| malformed("missing closing parenthesis or trailing text"))?;
    let (tool, field) = inner
        .split_once('.')
        .ok_or_else(|| malformed("missing '.' between tool and field"))?;
    if tool.is_empty() || field.is_empty() {
        return Err(malformed("empty identifier"));
    }
    if !is_identifier(tool) || !is_identifier(field) {
        return Err(malformed("tool and field must be identifiers"));
    }
    Ok(ArgExpr::ResultRef {
        tool: tool.to_owned(),
        field: field.to_owned(),
    })
}

fn is_none_text(s: &str) -> bool {
    s.trim().eq_ignore_ascii_case("none")
}

/// Parses the wire text of a chain (`None` or a JSON array of records).
pub fn parse_chain(raw: &str) -> Result<ToolChain, ChainError> {
    if is_none_text(raw) {
        return Ok(ToolChain::empty());
    }
    let value: Value = serde_json::from_str(raw).map_err(|e| ChainError::decode(None, e.to_string()))?;
    parse_chain_value(&value)
}

/// Parses an already-decoded chain: an array of records, `null`, or the
/// string `None` (or a string holding the wire text).
pub fn parse_chain_value(value: &Value) -> Result<ToolChain, ChainError> {
    let records = match value {
        Value::Null => return Ok(ToolChain::empty()),
        Value::String(s) => return parse_chain(s),
        Value::Array(items) => items,
        other => {
            return Err(ChainError::decode(
                None,
                format!("expected an array, found {}", kind(other)),
            ))
        }
    };
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_call(i, r))
        .collect::<Result<Vec<_>, _>>()
        .map(ToolChain::new)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn parse_call(index: usize, record: &Value) -> Result<ToolCall, ChainError> {
    let at = Some(index);
    let obj = record
        .as_object()
        .ok_or_else(|| ChainError::decode(at, format!("expected a record, found {}", kind(record))))?;
    let name = match obj.get("name") {
        Some(Value::String(s)) if is_identifier(s) => s.clone(),
        Some(Value::String(s)) => return Err(ChainError::decode(at, format!("tool name {s:?} is not an identifier"))),
        Some(other) => {
            return Err(ChainError::decode(
                at,
                format!("name must be a string, found {}", kind(other)),
            ))
        }
        None => return Err(ChainError::decode(at, "record has no \"name\"")),
    };
    let mut call = ToolCall::new(name);
    let params = match obj.get("params") {
        None | Some(Value::Null) => return Ok(call),
        Some(Value::String(s)) if is_none_text(s) => return Ok(call),
        Some(Value::Object(map)) => map,
        Some(other) => {
            return Err(ChainError::decode(
                at,
                format!("params must be an object or \"None\", found {}", kind(other)),
            ))
        }
    };
    for (param, v) in params {
        let text = match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            other => {
                return Err(ChainError::decode(
                    at,
                    format!("param {param:?} must be text, found {}", kind(other)),
                ))
            }
        };
        let expr = parse_arg(&text).map_err(|e| ChainError::InArgument {
            call: index,
            param: param.clone(),
            source: Box::new(e),
        })?;
        call.args.insert(param.clone(), expr);
    }
    Ok(call)
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn render_call(call: &ToolCall, desc: Option<&str>) -> String {
    let mut out = format!("{{\"name\": {}", quote(&call.name));
    if let Some(d) = desc {
        out.push_str(&format!(", \"desc\": {}", quote(d)));
    }
    if call.args.is_empty() {
        out.push_str(", \"params\": \"None\"}");
    } else {
        let args: Vec<String> = call
            .args
            .iter()
            .map(|(k, v)| format!("{}: {}", quote(k), quote(&v.to_string())))
            .collect();
        out.push_str(&format!(", \"params\": {{{}}}}}", args.join(", ")));
    }
    out
}

fn render_chain(
    chain: &ToolChain,
    mut desc: impl FnMut(&str) -> Result<Option<String>, ChainError>,
) -> Result<String, ChainError> {
    if chain.is_empty() {
        return Ok("None".to_owned());
    }
    let calls = chain
        .calls
        .iter()
        .map(|c| Ok(render_call(c, desc(&c.name)?.as_deref())))
        .collect::<Result<Vec<_>, ChainError>>()?;
    Ok(format!("[{}]", calls.join(", ")))
}

/// Canonical wire text; descriptions are taken from the registry.
pub fn serialize_chain(chain: &ToolChain, registry: &ToolRegistry) -> Result<String, ChainError> {
    render_chain(chain, |name| {
        registry
            .lookup(name)
            .map(|d| Some(d.description.clone()))
            .map_err(|_| ChainError::UnknownTool(name.to_owned()))
    })
}

/// Like [`serialize_chain`] but tolerates tools missing from the registry by
/// omitting their description. Used for model predictions.
pub fn serialize_chain_lenient(chain: &ToolChain, registry: &ToolRegistry) -> String {
    render_chain(chain, |name| {
        Ok(registry.lookup(name).ok().map(|d| d.description.clone()))
    })
    .expect("lenient rendering cannot fail")
}

/// The chain as a JSON value (`"None"` or an array of `{name, params}`),
/// used inside model completions and SFT targets.
pub fn chain_to_value(chain: &ToolChain) -> Value {
    if chain.is_empty() {
        return Value::String("None".into());
    }
    Value::Array(
        chain
            .calls
            .iter()
            .map(|c| {
                let params = if c.args.is_empty() {
                    Value::String("None".into())
                } else {
                    Value::Object(
                        c.args
                            .iter()
                            .map(|(k, v)| (k.clone(), Value::String(v.to_string())))
                            .collect(),
                    )
                };
                serde_json::json!({ "name": c.name, "params": params })
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainIssue {
    UnknownTool {
        tool: String,
    },
    MissingParam {
        param: String,
    },
    UnknownParam {
        param: String,
    },
    /// The referenced tool is only called at this index or later.
    ForwardReference {
        param: String,
        tool: String,
    },
    /// The referenced tool is never called in the chain.
    DanglingReference {
        param: String,
        tool: String,
    },
    UnknownField {
        param: String,
        tool: String,
        field: String,
    },
}

impl ChainIssue {
    pub fn kind(&self) -> &'static str {
        match self {
            ChainIssue::UnknownTool { .. } => "unknown_tool",
            ChainIssue::MissingParam { .. } => "missing_param",
            ChainIssue::UnknownParam { .. } => "unknown_param",
            ChainIssue::ForwardReference { .. } => "forward_reference",
            ChainIssue::DanglingReference { .. } => "dangling_reference",
            ChainIssue::UnknownField { .. } => "unknown_field",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainDiagnostic {
    pub call: usize,
    #[serde(flatten)]
    pub issue: ChainIssue,
}

/// Checks tool existence, arguments and reference ordering. An empty result
/// means the chain can run on any fixture without reference errors.
pub fn validate_chain(chain: &ToolChain, registry: &ToolRegistry) -> Vec<ChainDiagnostic> {
    let mut out = Vec::new();
    let mut push = |call, issue| out.push(ChainDiagnostic { call, issue });
    for (k, call) in chain.calls.iter().enumerate() {
        match registry.lookup(&call.name) {
            Err(_) => push(
                k,
                ChainIssue::UnknownTool {
                    tool: call.name.clone(),
                },
            ),
            Ok(desc) => {
                for v in validate_args(desc, call.args.keys().map(String::as_str)) {
                    push(
                        k,
                        match v {
                            ArgViolation::MissingParam(param) => ChainIssue::MissingParam { param },
                            ArgViolation::UnknownParam(param) => ChainIssue::UnknownParam { param },
                        },
                    );
                }
            }
        }
        for (param, tool, field) in call.references() {
            let (param, tool_s) = (param.to_owned(), tool.to_owned());
            if !chain.calls[..k].iter().any(|c| c.name == tool) {
                if chain.calls[k..].iter().any(|c| c.name == tool) {
                    push(k, ChainIssue::ForwardReference { param, tool: tool_s });
                } else {
                    push(k, ChainIssue::DanglingReference { param, tool: tool_s });
                }
                continue;
            }
            if let Ok(target) = registry.lookup(tool) {
                if !target.exposes(field) {
                    push(
                        k,
                        ChainIssue::UnknownField {
                            param,
                            tool: tool_s,
                            field: field.to_owned(),
                        },
                    );
                }
            }
        }
    }
    out
}
