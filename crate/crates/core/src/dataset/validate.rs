use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Serialize;

use super::record::{decode, DiagnosticKind, RecordDiagnostic};
use super::{split_lines, Dataset, DatasetEntry, DatasetError};
use crate::chainlang::{validate_chain, ChainIssue};
use crate::toolset::ToolRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleDiagnostics {
    /// 0-based record index (the header line is not a record).
    pub record: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub id: Option<String>,
    pub diagnostics: Vec<RecordDiagnostic>,
}

impl SampleDiagnostics {
    pub fn passed(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub samples: Vec<SampleDiagnostics>,
    pub counts: BTreeMap<DiagnosticKind, usize>,
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

impl ValidationReport {
    fn from_samples(samples: Vec<SampleDiagnostics>) -> Self {
        let mut counts = BTreeMap::new();
        for d in samples.iter().flat_map(|s| &s.diagnostics) {
            *counts.entry(d.kind).or_insert(0) += 1;
        }
        let passed = samples.iter().filter(|s| s.passed()).count();
        Self {
            total: samples.len(),
            failed: samples.len() - passed,
            passed,
            counts,
            samples,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.failed == 0
    }

    pub fn diagnostics(&self) -> impl Iterator<Item = (&SampleDiagnostics, &RecordDiagnostic)> {
        self.samples
            .iter()
            .flat_map(|s| s.diagnostics.iter().map(move |d| (s, d)))
    }

    /// Plain-text rendering: one line per diagnostic, then totals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (s, d) in self.diagnostics() {
            let id = s.id.as_deref().unwrap_or("?");
            let loc = match (d.field, d.call) {
                (_, Some(c)) => format!(" call {c}"),
                (Some(f), None) => format!(" {f:?}"),
                (None, None) => String::new(),
            };
            out.push_str(&format!("record {} ({id}){loc}: {}: {}\n", s.record, d.kind, d.message));
        }
        out.push_str(&format!(
            "{} sample(s): {} passed, {} failed\n",
            self.total, self.passed, self.failed
        ));
        for (k, n) in &self.counts {
            out.push_str(&format!("  {k}: {n}\n"));
        }
        out
    }
}

pub(crate) fn first_duplicate<'a>(ids: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = HashSet::new();
    ids.into_iter().find(|id| !seen.insert(*id))
}

fn describe(issue: &ChainIssue) -> String {
    match issue {
        ChainIssue::UnknownTool { tool } => format!("tool {tool:?} is not in the registry"),
        ChainIssue::MissingParam { param } => format!("required param {param:?} is missing"),
        ChainIssue::UnknownParam { param } => format!("param {param:?} is not declared"),
        ChainIssue::ForwardReference { param, tool } => {
            format!("param {param:?} reads {tool:?} before it is called")
        }
        ChainIssue::DanglingReference { param, tool } => {
            format!("param {param:?} reads {tool:?}, which the chain never calls")
        }
        ChainIssue::UnknownField { param, tool, field } => {
            format!("param {param:?} reads field {field:?}, which {tool:?} does not return")
        }
    }
}

/// Chain and media checks for a decoded entry.
pub(crate) fn entry_diagnostics(
    entry: &DatasetEntry,
    registry: &ToolRegistry,
    media_root: Option<&Path>,
) -> Vec<RecordDiagnostic> {
    let mut out: Vec<RecordDiagnostic> = validate_chain(entry.sample.annotation.chain(), registry)
        .into_iter()
        .map(|d| RecordDiagnostic {
            kind: DiagnosticKind::of_chain_issue(&d.issue),
            field: Some("Tools"),
            call: Some(d.call),
            message: describe(&d.issue),
        })
        .collect();
    for m in &entry.sample.media {
        let p = Path::new(m);
        let resolved = match media_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_owned(),
        };
        if !resolved.exists() {
            out.push(RecordDiagnostic::new(
                DiagnosticKind::MissingMedia,
                Some("Media"),
                format!("{} does not exist", resolved.display()),
            ));
        }
    }
    out
}

fn mark_duplicates(samples: &mut [SampleDiagnostics]) {
    let mut seen = HashSet::new();
    for s in samples {
        if let Some(id) = &s.id {
            if !seen.insert(id.clone()) {
                s.diagnostics.push(RecordDiagnostic::new(
                    DiagnosticKind::DuplicateId,
                    Some("Id"),
                    format!("id {id:?} is used by an earlier record"),
                ));
            }
        }
    }
}

/// Runs every check on an already-loaded dataset.
pub fn validate(dataset: &Dataset, registry: &ToolRegistry) -> ValidationReport {
    let mut samples: Vec<SampleDiagnostics> = dataset
        .entries
        .iter()
        .enumerate()
        .map(|(record, e)| SampleDiagnostics {
            record,
            line: None,
            id: Some(e.sample.id.clone()),
            diagnostics: entry_diagnostics(e, registry, dataset.media_root.as_deref()),
        })
        .collect();
    mark_duplicates(&mut samples);
    ValidationReport::from_samples(samples)
}

/// Validates a dataset file, reporting record-level problems as diagnostics
/// instead of stopping at the first. Only unreadable files and lines that
/// are not JSON at all are errors.
pub fn validate_file(path: &Path, registry: &ToolRegistry) -> Result<ValidationReport, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let (header, lines) = split_lines(&text)?;
    let media_root = path.parent();
    let mut samples: Vec<SampleDiagnostics> = lines
        .iter()
        .enumerate()
        .map(|(record, (line, value))| {
            let (id, diagnostics) = match decode(record, value, header.as_ref()) {
                Ok(entry) => (
                    Some(entry.sample.id.clone()),
                    entry_diagnostics(&entry, registry, media_root),
                ),
                Err(d) => (value.get("Id").and_then(|v| v.as_str()).map(str::to_owned), d),
            };
            SampleDiagnostics {
                record,
                line: Some(*line),
                id,
                diagnostics,
            }
        })
        .collect();
    mark_duplicates(&mut samples);
    Ok(ValidationReport::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{fixture_path, fixture_values, fixtures, to_text};
    use crate::toolset::registry_default;

    #[test]
    fn fixtures_are_clean() {
        let reg = registry_default();
        let report = validate(&fixtures(), &reg);
        assert!(report.is_clean(), "{}", report.render());
        assert_eq!(report.total, 5);
        assert!(validate_file(&fixture_path(), &reg).unwrap().is_clean());
    }

    fn file_kinds(values: &[serde_json::Value]) -> Vec<DiagnosticKind> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, to_text(true, values)).unwrap();
        let report = validate_file(&path, &registry_default()).unwrap();
        report.diagnostics().map(|(_, d)| d.kind).collect()
    }

    #[test]
    fn chain_mutations() {
        let values = fixture_values();
        let mut v = values.clone();
        v[0]["Tools"] = v[0]["Tools"]
            .as_str()
            .unwrap()
            .replace(", \"time\": \"this weekend\"", "")
            .into();
        assert_eq!(file_kinds(&v), [DiagnosticKind::MissingParam]);

        let mut v = values.clone();
        v[0]["Tools"] = v[0]["Tools"]
            .as_str()
            .unwrap()
            .replace("get_city_weather", "get_whether")
            .into();
        assert_eq!(file_kinds(&v), [DiagnosticKind::UnknownTool]);
    }

    #[test]
    fn forward_reference_mutation() {
        let mut values = fixture_values();
        let mut chain: serde_json::Value = serde_json::from_str(values[0]["Tools"].as_str().unwrap()).unwrap();
        let gps = chain[0].clone();
        chain[0] = chain[1].clone();
        chain[1] = gps;
        chain[0]["params"]["city"] = "$RESULT(get_current_gps_coordinates.city)".into();
        values[0]["Tools"] = chain.to_string().into();
        assert_eq!(file_kinds(&values), [DiagnosticKind::ForwardReference]);
    }

    #[test]
    fn duplicates_and_media() {
        let mut values = fixture_values();
        values[2]["Id"] = "example-1".into();
        values[4]["Media"] = serde_json::json!(["clips/missing.mp4"]);
        let kinds = file_kinds(&values);
        assert_eq!(kinds, [DiagnosticKind::DuplicateId, DiagnosticKind::MissingMedia]);
    }

    #[test]
    fn syntax_errors_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, "{\"Id\": \n").unwrap();
        assert!(validate_file(&path, &registry_default()).is_err());
        assert!(matches!(
            validate_file(&dir.path().join("nope.jsonl"), &registry_default()),
            Err(DatasetError::Io { .. })
        ));
    }
}
