//! Sequential execution of a tool chain against the mock world.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ArgExpr, ToolChain};
use crate::toolset::{
    invoke, validate_args, ArgViolation, ResolvedArgs, ToolError, ToolRegistry, ToolResult, WorldFixture,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepError {
    #[error("no completed call of {tool:?} to read from")]
    UnresolvedReference { tool: String },
    #[error("result of {tool:?} has no field {field:?}")]
    FieldMissing { tool: String, field: String },
    #[error("unknown tool {tool:?}")]
    UnknownTool { tool: String },
    #[error("invalid arguments for {tool:?}: {violations:?}")]
    InvalidArgs {
        tool: String,
        violations: Vec<ArgViolation>,
    },
    #[error("tool {tool:?} failed: {message}")]
    ToolFailed { tool: String, message: String },
}

impl From<ToolError> for StepError {
    fn from(e: ToolError) -> Self {
        match e {
            ToolError::UnknownTool(tool) => StepError::UnknownTool { tool },
            ToolError::SimulatedFailure { tool, message } => StepError::ToolFailed { tool, message },
            other => StepError::ToolFailed {
                tool: String::new(),
                message: other.to_string(),
            },
        }
    }
}

/// Latest successful result per tool name.
#[derive(Debug, Clone, Default)]
pub struct ResultStore {
    latest: HashMap<String, ToolResult>,
}

impl ResultStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a completed call; a later call of the same tool replaces it.
    pub fn record(&mut self, tool: &str, result: ToolResult) {
        self.latest.insert(tool.to_owned(), result);
    }

    pub fn get(&self, tool: &str) -> Option<&ToolResult> {
        self.latest.get(tool)
    }
}

pub fn resolve(expr: &ArgExpr, store: &ResultStore) -> Result<String, StepError> {
    match expr {
        ArgExpr::Literal(s) => Ok(s.clone()),
        ArgExpr::ResultRef { tool, field } => {
            let result = store
                .get(tool)
                .ok_or_else(|| StepError::UnresolvedReference { tool: tool.clone() })?;
            result
                .field(field)
                .map(str::to_owned)
                .ok_or_else(|| StepError::FieldMissing {
                    tool: tool.clone(),
                    field: field.clone(),
                })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Ok(ToolResult),
    Error(StepError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    pub tool: String,
    /// Arguments resolved before the failure point; empty when resolution failed.
    pub args: ResolvedArgs,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    AbortedAt(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<TraceStep>,
    pub status: TraceStatus,
}

impl ExecutionTrace {
    pub fn is_completed(&self) -> bool {
        self.status == TraceStatus::Completed
    }

    pub fn error(&self) -> Option<&StepError> {
        self.steps.last().and_then(|s| match &s.outcome {
            StepOutcome::Error(e) => Some(e),
            StepOutcome::Ok(_) => None,
        })
    }
}

/// Runs every call in order, resolving references from completed calls.
/// The first error aborts the run; errors never escape the trace.
pub fn execute(chain: &ToolChain, registry: &ToolRegistry, fixture: &WorldFixture) -> ExecutionTrace {
    let mut store = ResultStore::new();
    let mut steps = Vec::with_capacity(chain.len());

    for (index, call) in chain.calls.iter().enumerate() {
        let mut args = ResolvedArgs::new();
        let outcome = (|| {
            let descriptor = registry.lookup(&call.name)?;
            let violations = validate_args(descriptor, call.args.keys().map(String::as_str));
            if !violations.is_empty() {
                return Err(StepError::InvalidArgs {
                    tool: call.name.clone(),
                    violations,
                });
            }
            for (param, expr) in &call.args {
                args.insert(param.clone(), resolve(expr, &store)?);
            }
            Ok(invoke(registry, fixture, &call.name, &args)?)
        })();

        match outcome {
            Ok(result) => {
                store.record(&call.name, result.clone());
                steps.push(TraceStep {
                    index,
                    tool: call.name.clone(),
                    args,
                    outcome: StepOutcome::Ok(result),
                });
            }
            Err(e) => {
                steps.push(TraceStep {
                    index,
                    tool: call.name.clone(),
                    args,
                    outcome: StepOutcome::Error(e),
                });
                return ExecutionTrace {
                    steps,
                    status: TraceStatus::AbortedAt(index),
                };
            }
        }
    }
    ExecutionTrace {
        steps,
        status: TraceStatus::Completed,
    }
}
