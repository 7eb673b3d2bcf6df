//! Scoring predictions against annotated samples: proactive detection,
//! tool selection, argument accuracy, and a breakdown by chain length.

mod metrics;
mod report;

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainlang::{parse_chain, serialize_chain_lenient};
use crate::domain::{BenchmarkSample, ProactiveScore, ToolChain};
use crate::reasoner::SampleRun;
use crate::toolset::ToolRegistry;

pub use metrics::{
    align, args_accuracy, evaluate, level_breakdown, level_of, normalize_args, proactive_metrics, tool_metrics,
    Aligned, ArgsGranularity, ArgsMetrics, Averaging, EvalOptions, NormArg, ProactiveMetrics, ToolMetrics,
};
pub use report::{LevelReport, MetricsReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction ids do not match the dataset: {} missing, {} unexpected{}", missing.len(), extra.len(), preview(missing, extra))]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("duplicate prediction for {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn preview(missing: &[String], extra: &[String]) -> String {
    let first = missing.first().map(|m| format!(" (first missing: {m:?})"));
    let first = first.or_else(|| extra.first().map(|e| format!(" (first unexpected: {e:?})")));
    first.unwrap_or_default()
}

/// One predicted decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub id: String,
    pub score: ProactiveScore,
    pub chain: ToolChain,
    /// Set when the prediction is the passive fallback for a failed
    /// generation or parse.
    pub failure: bool,
}

/// Wire form of a prediction line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: String,
    score: i64,
    tools: String,
    #[serde(default)]
    failure: bool,
}

/// Predictions keyed by sample id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    preds: IndexMap<String, Prediction>,
}

impl PredictionSet {
    pub fn new(preds: Vec<Prediction>) -> Result<Self, EvalError> {
        let mut map = IndexMap::with_capacity(preds.len());
        for p in preds {
            if map.contains_key(&p.id) {
                return Err(EvalError::DuplicateId(p.id));
            }
            map.insert(p.id.clone(), p);
        }
        Ok(Self { preds: map })
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Prediction> {
        self.preds.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prediction> {
        self.preds.values()
    }

    /// The annotations themselves, as predictions.
    pub fn from_ground_truth(samples: &[BenchmarkSample]) -> Result<Self, EvalError> {
        Self::new(
            samples
                .iter()
                .map(|s| Prediction {
                    id: s.id.clone(),
                    score: s.annotation.score(),
                    chain: s.annotation.chain().clone(),
                    failure: false,
                })
                .collect(),
        )
    }

    pub fn from_runs(runs: &[SampleRun]) -> Result<Self, EvalError> {
        Self::new(
            runs.iter()
                .map(|r| Prediction {
                    id: r.id.clone(),
                    score: r.output.score(),
                    chain: r.output.chain().clone(),
                    failure: r.prediction_failure,
                })
                .collect(),
        )
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut preds = Vec::new();
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line = i + 1;
            let decode = |message: String| EvalError::Decode { line, message };
            let wire: PredictionLine = serde_json::from_str(raw).map_err(|e| decode(e.to_string()))?;
            let score = ProactiveScore::new(wire.score).map_err(|e| decode(e.to_string()))?;
            let chain = parse_chain(&wire.tools).map_err(|e| decode(e.to_string()))?;
            preds.push(Prediction {
                id: wire.id,
                score,
                chain,
                failure: wire.failure,
            });
        }
        Self::new(preds)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self, registry: &ToolRegistry) -> String {
        let mut out = String::new();
        for p in self.iter() {
            let tools = if p.chain.is_empty() {
                "None".to_owned()
            } else {
                serialize_chain_lenient(&p.chain, registry)
            };
            let line = PredictionLine {
                id: p.id.clone(),
                score: p.score.value().into(),
                tools,
                failure: p.failure,
            };
            out.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, registry: &ToolRegistry) -> Result<(), EvalError> {
        std::fs::write(path, self.to_jsonl(registry)).map_err(|e| EvalError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}
