//! Domain types shared by every stage of the pipeline: the assembled sensory
//! context, personas, proactive scores and the gate, tool chains, and the
//! agent output record.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing a domain value that would violate its invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("proactive score {0} is outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("gate threshold {0} is outside 2..=5")]
    ThresholdOutOfRange(i64),
    #[error("at least one of visual, audio or notification context must be present")]
    AllPartsMissing,
    #[error("persona entry {0} is blank")]
    BlankPersona(usize),
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
    #[error("score {0} does not warrant proactivity but a tool chain was given")]
    ChainOnPassiveScore(u8),
    #[error("score {0} does not warrant proactivity but a response was given")]
    ResponseOnPassiveScore(u8),
}

/// Returns true when `s` matches `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

const VISUAL_PREFIX: &str = "Visual information";
const AUDIO_PREFIX: &str = "Audio information";
const NOTIFICATION_PREFIX: &str = "Notification";

/// Assembled context: visual, audio and notification text.
///
/// `combined` is what the reasoner sees. Bundles assembled from parts render
/// each present part on its own line behind a fixed prefix; bundles loaded
/// from a dataset carry only the already-combined text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub visual: Option<String>,
    pub audio: Option<String>,
    pub notifications: Option<String>,
    pub combined: String,
}

impl ContextBundle {
    /// Wraps text that was combined upstream (e.g. the dataset's
    /// "Context information" field).
    pub fn from_combined(text: impl Into<String>) -> Self {
        Self {
            visual: None,
            audio: None,
            notifications: None,
            combined: text.into(),
        }
    }
}

fn present(part: Option<&str>) -> Option<String> {
    part.filter(|s| !s.trim().is_empty()).map(str::to_owned)
}

/// Joins the present context parts in the order visual, audio, notifications.
/// Blank parts count as absent.
pub fn assemble_context(
    visual: Option<&str>,
    audio: Option<&str>,
    notifications: Option<&str>,
) -> Result<ContextBundle, DomainError> {
    let visual = present(visual);
    let audio = present(audio);
    let notifications = present(notifications);

    let lines: Vec<String> = [
        (VISUAL_PREFIX, &visual),
        (AUDIO_PREFIX, &audio),
        (NOTIFICATION_PREFIX, &notifications),
    ]
    .iter()
    .filter_map(|(prefix, part)| part.as_ref().map(|p| format!("{prefix}: {p}")))
    .collect();

    if lines.is_empty() {
        return Err(DomainError::AllPartsMissing);
    }
    Ok(ContextBundle {
        visual,
        audio,
        notifications,
        combined: lines.join("\n"),
    })
}

/// User personas. May be empty; entries are never blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PersonaSet(Vec<String>);

impl PersonaSet {
    pub fn new(entries: Vec<String>) -> Result<Self, DomainError> {
        if let Some(i) = entries.iter().position(|e| e.trim().is_empty()) {
            return Err(DomainError::BlankPersona(i));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<String>> for PersonaSet {
    type Error = DomainError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PersonaSet> for Vec<String> {
    fn from(p: PersonaSet) -> Self {
        p.0
    }
}

/// Proactive score on the 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct ProactiveScore(u8);

impl ProactiveScore {
    pub const MIN: ProactiveScore = ProactiveScore(1);
    pub const MAX: ProactiveScore = ProactiveScore(5);

    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (1..=5).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(DomainError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Scores 1 and 2 mean no proactivity is warranted; such annotations never
    /// carry a chain or response.
    pub fn is_passive(self) -> bool {
        self.0 <= 2
    }
}

impl TryFrom<i64> for ProactiveScore {
    type Error = DomainError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ProactiveScore> for u8 {
    fn from(s: ProactiveScore) -> u8 {
        s.0
    }
}

impl fmt::Display for ProactiveScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// User-adjustable gate: proactive services start only when the score
/// reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct GateConfig {
    threshold: u8,
}

impl GateConfig {
    pub const DEFAULT_THRESHOLD: u8 = 3;
    pub const DEFAULT: GateConfig = GateConfig {
        threshold: Self::DEFAULT_THRESHOLD,
    };

    pub fn new(threshold: i64) -> Result<Self, DomainError> {
        if (2..=5).contains(&threshold) {
            Ok(Self {
                threshold: threshold as u8,
            })
        } else {
            Err(DomainError::ThresholdOutOfRange(threshold))
        }
    }

    pub fn threshold(self) -> u8 {
        self.threshold
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<i64> for GateConfig {
    type Error = DomainError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<GateConfig> for u8 {
    fn from(g: GateConfig) -> u8 {
        g.threshold
    }
}

pub fn needs_proactive(score: ProactiveScore, gate: GateConfig) -> bool {
    score.value() >= gate.threshold()
}

/// A tool-call argument: a literal string, or a reference to a named field of
/// an earlier tool's result (`$RESULT(tool.field)`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgExpr {
    Literal(String),
    ResultRef { tool: String, field: String },
}

impl ArgExpr {
    pub fn literal(s: impl Into<String>) -> Self {
        ArgExpr::Literal(s.into())
    }

    pub fn result_ref(tool: &str, field: &str) -> Result<Self, DomainError> {
        for id in [tool, field] {
            if !is_identifier(id) {
                return Err(DomainError::InvalidIdentifier(id.to_owned()));
            }
        }
        Ok(ArgExpr::ResultRef {
            tool: tool.to_owned(),
            field: field.to_owned(),
        })
    }
}

impl fmt::Display for ArgExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgExpr::Literal(s) => f.write_str(s),
            ArgExpr::ResultRef { tool, field } => write!(f, "$RESULT({tool}.{field})"),
        }
    }
}

/// One planned call `(t_i, a_i)`. Argument order is preserved; equality
/// compares arguments as a map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub args: IndexMap<String, ArgExpr>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            args: IndexMap::new(),
        }
    }

    pub fn arg(mut self, param: impl Into<String>, value: ArgExpr) -> Self {
        self.args.insert(param.into(), value);
        self
    }

    /// References made by this call, in argument order.
    pub fn references(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.args.iter().filter_map(|(param, expr)| match expr {
            ArgExpr::ResultRef { tool, field } => Some((param.as_str(), tool.as_str(), field.as_str())),
            ArgExpr::Literal(_) => None,
        })
    }
}

/// The planned chain `T_C`. Empty is the dataset's "None" chain.
///
/// Reference ordering is not enforced here: chains come from model output
/// and hand-written data, and ordering violations are reported by
/// `chainlang::validate_chain` and surfaced by the executor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolChain {
    pub calls: Vec<ToolCall>,
}

impl ToolChain {
    pub fn new(calls: Vec<ToolCall>) -> Self {
        Self { calls }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.calls.iter().map(|c| c.name.as_str())
    }

    /// True when every `$RESULT` reference in call k names a tool called at
    /// some index < k.
    pub fn references_are_ordered(&self) -> bool {
        self.calls.iter().enumerate().all(|(k, call)| {
            call.references()
                .all(|(_, tool, _)| self.calls[..k].iter().any(|c| c.name == tool))
        })
    }
}

/// Parsed agent decision: thought, score, tool chain, response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutput {
    thought: Option<String>,
    score: ProactiveScore,
    chain: ToolChain,
    response: Option<String>,
}

impl AgentOutput {
    /// Rejects passive scores (1 or 2) paired with a chain or a response.
    pub fn new(
        thought: Option<String>,
        score: ProactiveScore,
        chain: ToolChain,
        response: Option<String>,
    ) -> Result<Self, DomainError> {
        if score.is_passive() {
            if !chain.is_empty() {
                return Err(DomainError::ChainOnPassiveScore(score.value()));
            }
            if response.is_some() {
                return Err(DomainError::ResponseOnPassiveScore(score.value()));
            }
        }
        Ok(Self {
            thought,
            score,
            chain,
            response,
        })
    }

    /// The conservative output used when a completion could not be parsed.
    pub fn passive(thought: Option<String>) -> Self {
        Self {
            thought,
            score: ProactiveScore::MIN,
            chain: ToolChain::empty(),
            response: None,
        }
    }

    pub fn thought(&self) -> Option<&str> {
        self.thought.as_deref()
    }

    pub fn score(&self) -> ProactiveScore {
        self.score
    }

    pub fn chain(&self) -> &ToolChain {
        &self.chain
    }

    pub fn response(&self) -> Option<&str> {
        self.response.as_deref()
    }
}

/// One benchmark record: context, personas, ground-truth annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub context: ContextBundle,
    pub personas: PersonaSet,
    pub annotation: AgentOutput,
    pub scenario: Option<String>,
    pub media: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(v: i64) -> ProactiveScore {
        ProactiveScore::new(v).unwrap()
    }

    #[test]
    fn gate_examples() {
        let gate = GateConfig::default();
        assert_eq!(gate.threshold(), 3);
        assert!(needs_proactive(score(5), gate));
        assert!(!needs_proactive(score(1), gate));
        assert!(needs_proactive(score(3), gate));
    }

    #[test]
    fn gate_threshold_duality_exhaustive() {
        for s in 1..=5 {
            for t in 2..=5 {
                let gate = GateConfig::new(t).unwrap();
                assert_eq!(!needs_proactive(score(s), gate), s < t, "s={s} t={t}");
            }
        }
    }

    #[test]
    fn gate_is_monotone_in_score() {
        for t in 2..=5 {
            let gate = GateConfig::new(t).unwrap();
            let decisions: Vec<bool> = (1..=5).map(|s| needs_proactive(score(s), gate)).collect();
            assert!(decisions.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn score_and_threshold_ranges() {
        for v in [-1, 0, 6, 7, 100] {
            assert_eq!(ProactiveScore::new(v), Err(DomainError::ScoreOutOfRange(v)));
        }
        for v in [0, 1, 6] {
            assert!(GateConfig::new(v).is_err());
        }
        assert!(serde_json::from_str::<ProactiveScore>("7").is_err());
        assert_eq!(serde_json::from_str::<ProactiveScore>("4").unwrap(), score(4));
    }

    #[test]
    fn assemble_single_part() {
        let c = assemble_context(Some("user at bus stop"), None, None).unwrap();
        assert_eq!(c.combined, "Visual information: user at bus stop");
    }

    #[test]
    fn assemble_orders_parts() {
        let c = assemble_context(Some("v"), Some("a"), None).unwrap();
        assert_eq!(c.combined, "Visual information: v\nAudio information: a");
        let c = assemble_context(None, Some("a"), Some("n")).unwrap();
        assert_eq!(c.combined, "Audio information: a\nNotification: n");
    }

    #[test]
    fn assemble_requires_a_part() {
        assert_eq!(assemble_context(None, None, None), Err(DomainError::AllPartsMissing));
        assert_eq!(
            assemble_context(Some("  "), None, Some("")),
            Err(DomainError::AllPartsMissing)
        );
    }

    #[test]
    fn passive_output_rejects_chain_and_response() {
        let chain = ToolChain::new(vec![ToolCall::new("get_current_datetime")]);
        for s in [1, 2] {
            assert_eq!(
                AgentOutput::new(None, score(s), chain.clone(), None),
                Err(DomainError::ChainOnPassiveScore(s as u8))
            );
            assert!(AgentOutput::new(None, score(s), ToolChain::empty(), Some("hi".into())).is_err());
            assert!(AgentOutput::new(None, score(s), ToolChain::empty(), None).is_ok());
        }
        // Proactive scores may carry an empty chain (e.g. model predictions).
        assert!(AgentOutput::new(None, score(3), ToolChain::empty(), None).is_ok());
        assert!(AgentOutput::new(None, score(3), chain, Some("r".into())).is_ok());
    }

    #[test]
    fn personas_reject_blank_entries() {
        assert!(PersonaSet::new(vec![]).is_ok());
        assert_eq!(
            PersonaSet::new(vec!["a".into(), " ".into()]),
            Err(DomainError::BlankPersona(1))
        );
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("get_current_gps_coordinates"));
        assert!(is_identifier("_x9"));
        assert!(!is_identifier("9x"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("a.b"));
        assert!(ArgExpr::result_ref("gps", "city").is_ok());
        assert!(ArgExpr::result_ref("gps", "").is_err());
    }

    #[test]
    fn reference_ordering() {
        let gps = ToolCall::new("gps");
        let weather = ToolCall::new("weather").arg("city", ArgExpr::result_ref("gps", "city").unwrap());
        assert!(ToolChain::new(vec![gps.clone(), weather.clone()]).references_are_ordered());
        assert!(!ToolChain::new(vec![weather, gps]).references_are_ordered());
    }

    fn part() -> impl Strategy<Value = Option<String>> {
        prop::option::of("[a-z][a-z ]{0,12}")
    }

    proptest! {
        #[test]
        fn assembled_context_contains_parts_in_order(v in part(), a in part(), n in part()) {
            match assemble_context(v.as_deref(), a.as_deref(), n.as_deref()) {
                Err(DomainError::AllPartsMissing) => {
                    prop_assert!(v.is_none() && a.is_none() && n.is_none());
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
                Ok(bundle) => {
                    prop_assert!(!bundle.combined.is_empty());
                    let mut cursor = 0;
                    for p in [&v, &a, &n].into_iter().flatten() {
                        let at = bundle.combined[cursor..].find(p.as_str());
                        prop_assert!(at.is_some());
                        cursor += at.unwrap() + p.len();
                    }
                }
            }
        }

        #[test]
        fn presence_patterns_give_distinct_renderings(mask_a in 1u8..8, mask_b in 1u8..8) {
            let render = |mask: u8| {
                let pick = |bit: u8, s: &'static str| (mask & bit != 0).then_some(s);
                assemble_context(pick(1, "x"), pick(2, "x"), pick(4, "x")).unwrap().combined
            };
            prop_assert_eq!(mask_a == mask_b, render(mask_a) == render(mask_b));
        }
    }
}
