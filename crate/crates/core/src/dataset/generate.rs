//! Candidate generation: prompt a backend for new samples, keep the ones that
//! decode, match the strategy, validate and are not duplicates.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::record::{decode, SampleRecord};
use super::validate::entry_diagnostics;
use super::{DatasetEntry, DatasetError};
use crate::domain::ProactiveScore;
use crate::par::{self, Execution};
use crate::reasoner::{toolset_section, BackendError, GenerationRequest, TextBackend};
use crate::toolset::ToolRegistry;

pub const GENERATION_INSTRUCTIONS: &str = include_str!("../../prompts/generation.txt");

const EXEMPLARS_PER_PROMPT: usize = 3;
const PERSONAS_PER_PROMPT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    ScenarioAware(String),
    ScoreAware(ProactiveScore),
}

#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub strategy: Strategy,
    pub exemplars: Vec<SampleRecord>,
    pub personas: Vec<String>,
    pub count: usize,
    pub seed: u64,
    /// Samples requested per backend call.
    pub per_request: usize,
    /// Maximum backend calls; defaults to five per requested sample.
    pub budget: Option<usize>,
    pub parallelism: Execution,
    pub id_prefix: String,
}

impl GenerationJob {
    pub fn new(
        strategy: Strategy,
        exemplars: Vec<SampleRecord>,
        personas: Vec<String>,
        count: usize,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        if exemplars.is_empty() {
            return Err(DatasetError::Job("the exemplar pool is empty".into()));
        }
        Ok(Self {
            strategy,
            exemplars,
            personas,
            count,
            seed,
            per_request: 5,
            budget: None,
            parallelism: Execution::Sequential,
            id_prefix: "gen-".into(),
        })
    }

    pub fn budget(&self) -> usize {
        self.budget.unwrap_or(5 * self.count)
    }

    fn matching_exemplars(&self) -> Vec<&SampleRecord> {
        let matching: Vec<&SampleRecord> = self
            .exemplars
            .iter()
            .filter(|r| match &self.strategy {
                Strategy::ScenarioAware(label) => r.scenario.as_ref() == Some(label),
                Strategy::ScoreAware(s) => r.score == i64::from(s.value()),
            })
            .collect();
        if matching.is_empty() {
            self.exemplars.iter().collect()
        } else {
            matching
        }
    }
}

pub fn load_personas(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Digest of the context with case and whitespace runs normalized.
pub fn normalized_digest(text: &str) -> String {
    let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    hex::encode(Sha256::digest(norm.as_bytes()))
}

/// The (system, user) prompt for one backend call.
pub fn generation_prompt(job: &GenerationJob, registry: &ToolRegistry, attempt: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    rng.set_stream(attempt);

    let system = format!(
        "{}\n\n{}",
        GENERATION_INSTRUCTIONS.trim_end(),
        toolset_section(registry)
    );

    let mut exemplars = job.matching_exemplars();
    exemplars.shuffle(&mut rng);
    let mut user = String::from("## Example samples\n");
    for r in exemplars.into_iter().take(EXEMPLARS_PER_PROMPT) {
        let mut r = r.clone();
        r.id = None;
        user.push_str(&serde_json::to_string(&r).expect("record serializes"));
        user.push('\n');
    }
    if !job.personas.is_empty() {
        let mut personas: Vec<&String> = job.personas.iter().collect();
        personas.shuffle(&mut rng);
        user.push_str("\n## Personas to draw from\n");
        for p in personas.into_iter().take(PERSONAS_PER_PROMPT) {
            user.push_str(&format!("- {p}\n"));
        }
    }
    let target = match &job.strategy {
        Strategy::ScenarioAware(label) => format!("set in the \"{label}\" scenario (write \"Scenario\": \"{label}\")"),
        Strategy::ScoreAware(s) => format!("whose proactive score is exactly {s}"),
    };
    user.push_str(&format!(
        "\n## Request\nWrite {} new samples {target}, one JSON object per line.\n",
        job.per_request
    ));
    (system, user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Decode { message: String },
    StrategyMismatch { message: String },
    Invalid { diagnostics: Vec<String> },
    Duplicate { digest: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub attempt: usize,
    pub candidate: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stop", content = "detail", rename_all = "snake_case")]
pub enum StopReason {
    CountReached,
    BudgetExhausted,
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationReport {
    pub accepted: Vec<DatasetEntry>,
    pub rejected: Vec<Rejection>,
    /// Backend calls whose output was consumed.
    pub attempts: usize,
    pub stop: StopReason,
}

impl GenerationReport {
    /// Turns a short run into an error; the partial results stay in `self`
    /// for callers that want them.
    pub fn check(&self) -> Result<(), DatasetError> {
        match &self.stop {
            StopReason::CountReached => Ok(()),
            StopReason::BudgetExhausted => Err(DatasetError::Job(format!(
                "attempt budget exhausted after {} call(s) with {} sample(s) accepted",
                self.attempts,
                self.accepted.len()
            ))),
            StopReason::Backend(e) => Err(DatasetError::Job(format!("backend failed: {e}"))),
        }
    }
}

/// Candidate lines of a completion: every line that opens a JSON object.
fn candidates(completion: &str) -> impl Iterator<Item = &str> {
    completion.lines().map(str::trim).filter(|l| l.starts_with('{'))
}

struct Screen<'a> {
    job: &'a GenerationJob,
    registry: &'a ToolRegistry,
    seen: HashSet<String>,
}

impl Screen<'_> {
    fn check(&mut self, line: &str, index: usize) -> Result<DatasetEntry, RejectReason> {
        let mut value: Value =
            serde_json::from_str(line).map_err(|e| RejectReason::Decode { message: e.to_string() })?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("Id");
            if let Some(t) = obj.get_mut("Tools").filter(|t| t.is_array()) {
                *t = Value::String(t.to_string());
            }
            if let Strategy::ScenarioAware(label) = &self.job.strategy {
                obj.entry("Scenario").or_insert_with(|| Value::String(label.clone()));
            }
        }
        let entry = decode(index, &value, None).map_err(|d| RejectReason::Decode {
            message: d
                .iter()
                .map(|d| format!("{}: {}", d.kind, d.message))
                .collect::<Vec<_>>()
                .join("; "),
        })?;
        let sample = &entry.sample;
        match &self.job.strategy {
            Strategy::ScoreAware(s) if sample.annotation.score() != *s => {
                return Err(RejectReason::StrategyMismatch {
                    message: format!("score {} requested, got {}", s, sample.annotation.score()),
                })
            }
            Strategy::ScenarioAware(label) if sample.scenario.as_ref() != Some(label) => {
                return Err(RejectReason::StrategyMismatch {
                    message: format!("scenario {label:?} requested, got {:?}", sample.scenario),
                })
            }
            _ => {}
        }
        if !sample.media.is_empty() {
            return Err(RejectReason::Invalid {
                diagnostics: vec!["generated samples cannot reference media".into()],
            });
        }
        let diags = entry_diagnostics(&entry, self.registry, None);
        if !diags.is_empty() {
            return Err(RejectReason::Invalid {
                diagnostics: diags.iter().map(|d| format!("{}: {}", d.kind, d.message)).collect(),
            });
        }
        let digest = normalized_digest(&sample.context.combined);
        if !self.seen.insert(digest.clone()) {
            return Err(RejectReason::Duplicate { digest });
        }
        Ok(entry)
    }
}

/// Requests candidates until `job.count` are accepted, the attempt budget is
/// spent, or the backend fails. Calls within a batch run concurrently; their
/// outputs are screened in attempt order, so results do not depend on the
/// execution mode.
pub fn generate(job: &GenerationJob, backend: &dyn TextBackend, registry: &ToolRegistry) -> GenerationReport {
    let mut screen = Screen {
        job,
        registry,
        seen: job.exemplars.iter().map(|r| normalized_digest(&r.context)).collect(),
    };
    let mut report = GenerationReport {
        accepted: Vec::new(),
        rejected: Vec::new(),
        attempts: 0,
        stop: StopReason::CountReached,
    };
    let budget = job.budget();
    let width = job.parallelism.width().max(1);

    while report.accepted.len() < job.count {
        if report.attempts >= budget {
            report.stop = StopReason::BudgetExhausted;
            return report;
        }
        let batch: Vec<usize> = (report.attempts..budget.min(report.attempts + width)).collect();
        let outputs: Vec<Result<String, BackendError>> = par::map(job.parallelism, &batch, |&attempt| {
            let (system, user) = generation_prompt(job, registry, attempt as u64);
            let key = format!("gen-{attempt}");
            backend.generate(&GenerationRequest {
                key: &key,
                system: Some(&system),
                user: &user,
            })
        });
        for (attempt, output) in batch.into_iter().zip(outputs) {
            let completion = match output {
                Ok(c) => c,
                Err(e) => {
                    report.stop = StopReason::Backend(e.to_string());
                    return report;
                }
            };
            report.attempts += 1;
            for (candidate, line) in candidates(&completion).enumerate() {
                if report.accepted.len() == job.count {
                    break;
                }
                match screen.check(line, report.accepted.len()) {
                    Ok(mut entry) => {
                        let id = format!("{}{:04}", job.id_prefix, report.accepted.len() + 1);
                        entry.sample.id = id.clone();
                        entry.record.id = Some(id);
                        report.accepted.push(entry);
                    }
                    Err(reason) => report.rejected.push(Rejection {
                        attempt,
                        candidate,
                        reason,
                    }),
                }
            }
            if report.accepted.len() == job.count {
                break;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::fixtures;
    use crate::dataset::{validate, Dataset};
    use crate::reasoner::ReplayBackend;
    use crate::toolset::registry_default;

    fn pool() -> Vec<SampleRecord> {
        fixtures().entries.into_iter().map(|e| e.record).collect()
    }

    fn candidate(context: &str, score: i64) -> String {
        let (tools, response) = if score <= 2 {
            ("None".to_owned(), "None")
        } else {
            (
                r#"[{"name": "get_current_datetime", "params": "None"}]"#.to_owned(),
                "It is 9 AM.",
            )
        };
        serde_json::json!({
            "Context information": context,
            "Personas": ["A nurse working night shifts."],
            "Thoughts": "Reasoning.",
            "Proactive score": score,
            "Tools": tools,
            "Response": response,
            "Scenario": "work",
        })
        .to_string()
    }

    #[test]
    fn two_valid_one_malformed() {
        let reg = registry_default();
        let completion = [
            candidate("Visual information shows a hospital corridor.", 4),
            "{\"Context information\": \"broken\"".to_owned(),
            candidate("Visual information shows a break room.", 3),
        ]
        .join("\n");
        let backend = ReplayBackend::from_pairs([("gen-0", completion)]);
        let job = GenerationJob::new(Strategy::ScenarioAware("work".into()), pool(), vec![], 2, 7).unwrap();
        let report = generate(&job, &backend, &reg);
        assert_eq!(report.stop, StopReason::CountReached);
        assert_eq!(report.accepted.len(), 2);
        assert_eq!(report.rejected.len(), 1);
        assert!(matches!(report.rejected[0].reason, RejectReason::Decode { .. }));
        let ds = Dataset::new(None, report.accepted);
        assert!(validate(&ds, &reg).is_clean());
    }

    #[test]
    fn score_aware_filters_and_dedups() {
        let reg = registry_default();
        let c1 = candidate("Visual information shows a quiet library.", 1);
        let dup = candidate("visual information   shows a QUIET library.", 1);
        let c3 = candidate("Visual information shows a busy cafe.", 4);
        let existing = candidate(&fixtures().entries[4].record.context, 1);
        let backend = ReplayBackend::from_pairs([
            ("gen-0", format!("{c1}\n{dup}")),
            ("gen-1", format!("{c3}\n{existing}")),
        ]);
        let mut job = GenerationJob::new(
            Strategy::ScoreAware(ProactiveScore::new(1).unwrap()),
            pool(),
            vec!["p".into()],
            3,
            1,
        )
        .unwrap();
        job.budget = Some(2);
        let report = generate(&job, &backend, &reg);
        assert_eq!(report.stop, StopReason::BudgetExhausted);
        assert!(report.check().is_err());
        assert_eq!(report.accepted.len(), 1);
        let kinds: Vec<_> = report.rejected.iter().map(|r| &r.reason).collect();
        assert!(matches!(kinds[0], RejectReason::Duplicate { .. }));
        assert!(matches!(kinds[1], RejectReason::StrategyMismatch { .. }));
        assert!(matches!(kinds[2], RejectReason::Duplicate { .. }));
        for e in &report.accepted {
            assert_eq!(e.sample.annotation.score().value(), 1);
            assert!(e.sample.annotation.chain().is_empty());
        }
    }

    #[test]
    fn backend_failure_stops() {
        let backend = ReplayBackend::default();
        let job = GenerationJob::new(Strategy::ScenarioAware("work".into()), pool(), vec![], 1, 0).unwrap();
        let report = generate(&job, &backend, &registry_default());
        assert!(matches!(report.stop, StopReason::Backend(_)));
        assert_eq!(report.attempts, 0);
    }

    #[test]
    fn modes_agree() {
        let reg = registry_default();
        let pairs: Vec<(String, String)> = (0..6)
            .map(|i| {
                (
                    format!("gen-{i}"),
                    candidate(&format!("Visual information shows room {i}."), 3),
                )
            })
            .collect();
        let backend = ReplayBackend::from_pairs(pairs);
        let mut job = GenerationJob::new(Strategy::ScenarioAware("work".into()), pool(), vec![], 4, 3).unwrap();
        let seq = generate(&job, &backend, &reg);
        job.parallelism = Execution::Parallel(3);
        let par = generate(&job, &backend, &reg);
        assert_eq!(seq.accepted, par.accepted);
        assert_eq!(seq.accepted.len(), 4);
    }

    #[test]
    fn prompt_is_seeded() {
        let reg = registry_default();
        let job = GenerationJob::new(
            Strategy::ScoreAware(ProactiveScore::new(5).unwrap()),
            pool(),
            (0..10).map(|i| format!("persona {i}")).collect(),
            1,
            9,
        )
        .unwrap();
        assert_eq!(generation_prompt(&job, &reg, 0), generation_prompt(&job, &reg, 0));
        let (system, user) = generation_prompt(&job, &reg, 0);
        assert!(system.contains("### get_city_weather"));
        assert!(user.contains("proactive score is exactly 5"));
        assert!(user.contains("When planning hiking activities"));
        assert!(GenerationJob::new(Strategy::ScenarioAware("x".into()), vec![], vec![], 1, 0).is_err());
    }
}
