use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{validate, Dataset, DatasetError};
use crate::chainlang::chain_to_value;
use crate::reasoner::build_runtime_prompt;
use crate::toolset::ToolRegistry;

/// One fine-tuning triple: rendered input, thought, target decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub input: String,
    pub thought: String,
    pub target: String,
}

/// One SFT record per sample. Refuses datasets that fail validation.
pub fn export_sft(dataset: &Dataset, registry: &ToolRegistry) -> Result<Vec<SftRecord>, DatasetError> {
    let report = validate(dataset, registry);
    if !report.is_clean() {
        let (s, d) = report.diagnostics().next().expect("failed report has a diagnostic");
        return Err(DatasetError::Invalid {
            failed: report.failed,
            first: format!("{}: {}: {}", s.id.as_deref().unwrap_or("?"), d.kind, d.message),
        });
    }
    Ok(dataset
        .samples()
        .map(|s| {
            let a = &s.annotation;
            let tools = if a.chain().is_empty() {
                Value::String("None".into())
            } else {
                chain_to_value(a.chain())
            };
            let mut target = Map::new();
            target.insert("proactive_score".into(), a.score().value().into());
            target.insert("tools".into(), tools);
            SftRecord {
                input: build_runtime_prompt(&s.context, &s.personas),
                thought: format!("<think>{}</think>", a.thought().unwrap_or_default()),
                target: Value::Object(target).to_string(),
            }
        })
        .collect())
}

pub fn write_sft(records: &[SftRecord], path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DatasetError::io(path, e))
}

/// Distribution counts. Score and chain-length bins are always present,
/// including empty ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub by_scenario: BTreeMap<String, usize>,
    pub by_score: BTreeMap<u8, usize>,
    pub by_chain_length: BTreeMap<usize, usize>,
    /// Calls per tool name, over all chains.
    pub by_tool: BTreeMap<String, usize>,
}

pub const UNLABELED: &str = "(none)";

pub fn stats(dataset: &Dataset) -> DatasetStats {
    let mut st = DatasetStats {
        samples: dataset.len(),
        by_scenario: BTreeMap::new(),
        by_score: (1..=5).map(|s| (s, 0)).collect(),
        by_chain_length: (0..=5).map(|l| (l, 0)).collect(),
        by_tool: BTreeMap::new(),
    };
    for s in dataset.samples() {
        let label = s.scenario.clone().unwrap_or_else(|| UNLABELED.to_owned());
        *st.by_scenario.entry(label).or_default() += 1;
        *st.by_score.entry(s.annotation.score().value()).or_default() += 1;
        *st.by_chain_length.entry(s.annotation.chain().len()).or_default() += 1;
        for name in s.annotation.chain().tool_names() {
            *st.by_tool.entry(name.to_owned()).or_default() += 1;
        }
    }
    st
}

impl DatasetStats {
    pub fn render(&self) -> String {
        fn section<K: std::fmt::Display>(out: &mut String, title: &str, map: &BTreeMap<K, usize>) {
            out.push_str(title);
            out.push('\n');
            let width = map.keys().map(|k| k.to_string().len()).max().unwrap_or(0);
            for (k, v) in map {
                out.push_str(&format!("  {:<width$}  {v}\n", k.to_string()));
            }
        }
        let mut out = format!("samples: {}\n", self.samples);
        section(&mut out, "scenario", &self.by_scenario);
        section(&mut out, "proactive score", &self.by_score);
        section(&mut out, "chain length", &self.by_chain_length);
        section(&mut out, "tool calls", &self.by_tool);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::fixtures;
    use crate::reasoner::parse_output;
    use crate::toolset::registry_default;

    #[test]
    fn sft_records() {
        let recs = export_sft(&fixtures(), &registry_default()).unwrap();
        assert_eq!(recs.len(), 5);
        assert!(recs[0].thought.starts_with("<think>"));
        assert!(recs[0].thought.contains("When planning hiking activities"));
        let y4: Value = serde_json::from_str(&recs[3].target).unwrap();
        assert_eq!(y4["tools"], "None");
        assert_eq!(y4["proactive_score"], 2);
        for (r, s) in recs.iter().zip(fixtures().samples()) {
            let parsed = parse_output(&r.target).output.unwrap();
            assert_eq!(parsed.score(), s.annotation.score());
            assert_eq!(parsed.chain(), s.annotation.chain());
        }
        assert!(recs[1].input.contains("history of managing Type 2 diabetes"));
    }

    #[test]
    fn empty_dataset_exports_nothing() {
        let recs = export_sft(&Dataset::default(), &registry_default()).unwrap();
        assert!(recs.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sft.jsonl");
        write_sft(&recs, &p).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "");
    }

    #[test]
    fn invalid_dataset_is_refused() {
        let mut ds = fixtures();
        let reg = registry_default();
        let bad = crate::chainlang::parse_chain(r#"[{"name": "get_whether", "params": "None"}]"#).unwrap();
        let a = &ds.entries[0].sample.annotation;
        ds.entries[0].sample.annotation = crate::domain::AgentOutput::new(
            a.thought().map(str::to_owned),
            a.score(),
            bad,
            a.response().map(str::to_owned),
        )
        .unwrap();
        assert!(matches!(
            export_sft(&ds, &reg),
            Err(DatasetError::Invalid { failed: 1, .. })
        ));
    }

    #[test]
    fn fixture_stats() {
        let st = stats(&fixtures());
        let nz = |m: &BTreeMap<usize, usize>| {
            m.iter()
                .filter(|(_, v)| **v > 0)
                .map(|(k, v)| (*k, *v))
                .collect::<Vec<_>>()
        };
        assert_eq!(st.by_score, BTreeMap::from([(1, 1), (2, 1), (3, 1), (4, 1), (5, 1)]));
        assert_eq!(nz(&st.by_chain_length), [(0, 2), (2, 2), (4, 1)]);
        assert_eq!(st.by_tool["get_current_gps_coordinates"], 2);
        assert_eq!(st.by_scenario.values().sum::<usize>(), 5);
        assert!(st.render().contains("chain length"));
    }
}
