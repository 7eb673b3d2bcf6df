//! Benchmark datasets: line-delimited records, strict loading, validation,
//! splitting, SFT export, statistics and candidate generation.

mod export;
mod generate;
mod record;
mod split;
mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::BenchmarkSample;
use crate::toolset::ToolRegistry;

pub use export::{export_sft, stats, write_sft, DatasetStats, SftRecord};
pub use generate::{
    generate, generation_prompt, load_personas, normalized_digest, GenerationJob, GenerationReport, RejectReason,
    Rejection, StopReason, Strategy,
};
pub use record::{DiagnosticKind, RecordDiagnostic, SampleRecord};
pub use split::{split, SplitMode};
pub use validate::{validate, validate_file, SampleDiagnostics, ValidationReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("record {record} (line {line}){}: {message}", field.map(|f| format!(", field {f:?}")).unwrap_or_default())]
    Decode {
        record: usize,
        line: usize,
        field: Option<&'static str>,
        message: String,
    },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("dataset has {failed} invalid sample(s); first: {first}")]
    Invalid { failed: usize, first: String },
    #[error("invalid generation job: {0}")]
    Job(String),
}

impl DatasetError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DatasetError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        }
    }
}

/// Optional first line of a dataset file naming the allowed scenarios.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    #[serde(rename = "Scenarios")]
    pub scenarios: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    #[serde(rename = "Header")]
    header: DatasetHeader,
}

/// A stored record together with its decoded sample. The record is kept so
/// saving reproduces the original text of every field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub record: SampleRecord,
    pub sample: BenchmarkSample,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub header: Option<DatasetHeader>,
    pub entries: Vec<DatasetEntry>,
    /// Directory that relative media paths resolve against.
    pub media_root: Option<PathBuf>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.entries == other.entries
    }
}

impl Dataset {
    pub fn new(header: Option<DatasetHeader>, entries: Vec<DatasetEntry>) -> Self {
        Self {
            header,
            entries,
            media_root: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &BenchmarkSample> {
        self.entries.iter().map(|e| &e.sample)
    }

    /// Samples cloned out, in file order.
    pub fn to_samples(&self) -> Vec<BenchmarkSample> {
        self.samples().cloned().collect()
    }

    /// Same header and media root, different entries.
    pub fn with_entries(&self, entries: Vec<DatasetEntry>) -> Self {
        Self {
            header: self.header.clone(),
            entries,
            media_root: self.media_root.clone(),
        }
    }

    /// Builds entries from in-memory samples, rendering chains with the
    /// registry's descriptions.
    pub fn from_samples(header: Option<DatasetHeader>, samples: Vec<BenchmarkSample>, registry: &ToolRegistry) -> Self {
        let entries = samples
            .into_iter()
            .map(|sample| DatasetEntry {
                record: SampleRecord::from_sample(&sample, registry),
                sample,
            })
            .collect();
        Self::new(header, entries)
    }

    /// Parses dataset text. Unknown fields, out-of-range scores, malformed
    /// chains and passive samples with tools are all rejected.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let (header, lines) = split_lines(text)?;
        let mut entries = Vec::with_capacity(lines.len());
        for (record, (line, value)) in lines.into_iter().enumerate() {
            let entry = record::decode(record, &value, header.as_ref()).map_err(|diags| {
                let first = diags.into_iter().next().expect("decode failures carry a diagnostic");
                DatasetError::Decode {
                    record,
                    line,
                    field: first.field,
                    message: first.message,
                }
            })?;
            entries.push(entry);
        }
        if let Some(dup) = validate::first_duplicate(entries.iter().map(|e| e.sample.id.as_str())) {
            return Err(DatasetError::DuplicateId(dup.to_owned()));
        }
        Ok(Self::new(header, entries))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let mut ds = Self::parse(&text)?;
        ds.media_root = path.parent().map(Path::to_owned);
        Ok(ds)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&to_line(&HeaderLine { header: h.clone() }));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&to_line(&e.record));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|e| DatasetError::io(path, e))
    }
}

/// JSON with `", "` and `": "` separators, the layout of the published
/// records.
struct SpacedFormatter;

impl serde_json::ser::Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            w.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b": ")
    }
}

pub(crate) fn to_line<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SpacedFormatter);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Splits file text into an optional header and (line number, value) pairs.
/// Only JSON syntax errors fail here.
/// 1-based line number and decoded value of each record line.
type RecordLines = Vec<(usize, Value)>;

fn split_lines(text: &str) -> Result<(Option<DatasetHeader>, RecordLines), DatasetError> {
    let mut header = None;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Decode {
            record: values.len(),
            line,
            field: None,
            message: e.to_string(),
        })?;
        if value.get("Header").is_some() {
            if header.is_some() || !values.is_empty() {
                return Err(DatasetError::Decode {
                    record: values.len(),
                    line,
                    field: Some("Header"),
                    message: "a header is only allowed on the first line".into(),
                });
            }
            let h: HeaderLine = serde_json::from_value(value).map_err(|e| DatasetError::Decode {
                record: 0,
                line,
                field: Some("Header"),
                message: e.to_string(),
            })?;
            header = Some(h.header);
            continue;
        }
        values.push((line, value));
    }
    Ok((header, values))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn fixture_path() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/samples.jsonl")
    }

    pub(crate) fn fixtures() -> Dataset {
        Dataset::load(&fixture_path()).unwrap()
    }

    /// The fixture records as raw values, for mutation tests.
    pub(crate) fn fixture_values() -> Vec<Value> {
        std::fs::read_to_string(fixture_path())
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    pub(crate) fn to_text(header: bool, values: &[Value]) -> String {
        let mut out = String::new();
        if header {
            out.push_str(std::fs::read_to_string(fixture_path()).unwrap().lines().next().unwrap());
            out.push('\n');
        }
        for v in values {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    #[test]
    fn loads_five_examples() {
        let ds = fixtures();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.header.as_ref().unwrap().scenarios.len(), 9);
        let scores: Vec<u8> = ds.samples().map(|s| s.annotation.score().value()).collect();
        assert_eq!(scores, [5, 4, 3, 2, 1]);
        assert_eq!(ds.entries[0].sample.annotation.chain().len(), 4);
    }

    #[test]
    fn decode_errors_name_record_and_field() {
        let mut values = fixture_values();
        values[1]["Proactive score"] = 7.into();
        let err = Dataset::parse(&to_text(true, &values)).unwrap_err();
        assert!(
            matches!(
                err,
                DatasetError::Decode {
                    record: 1,
                    line: 3,
                    field: Some("Proactive score"),
                    ..
                }
            ),
            "{err:?}"
        );

        let mut values = fixture_values();
        values[3]["Tools"] = r#"[{"name": "play_music", "params": "None"}]"#.into();
        let err = Dataset::parse(&to_text(true, &values)).unwrap_err();
        assert!(
            matches!(
                err,
                DatasetError::Decode {
                    record: 3,
                    field: Some("Tools"),
                    ..
                }
            ),
            "{err:?}"
        );

        let mut values = fixture_values();
        values[0]["Extra"] = "x".into();
        assert!(matches!(
            Dataset::parse(&to_text(true, &values)),
            Err(DatasetError::Decode { record: 0, .. })
        ));

        assert!(matches!(
            Dataset::parse("{not json"),
            Err(DatasetError::Decode { line: 1, .. })
        ));
    }

    #[test]
    fn save_load_identity() {
        let ds = fixtures();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/ds.jsonl");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(fixture_path()).unwrap()
        );
    }

    #[test]
    fn ids_are_assigned_when_missing() {
        let mut values = fixture_values();
        for v in &mut values {
            v.as_object_mut().unwrap().remove("Id");
        }
        let ds = Dataset::parse(&to_text(false, &values)).unwrap();
        assert!(ds.header.is_none());
        let ids: Vec<&str> = ds.samples().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["sample-1", "sample-2", "sample-3", "sample-4", "sample-5"]);
        let again = Dataset::parse(&ds.to_jsonl()).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut values = fixture_values();
        values[1]["Id"] = "example-1".into();
        assert_eq!(
            Dataset::parse(&to_text(true, &values)),
            Err(DatasetError::DuplicateId("example-1".into()))
        );
    }

    #[test]
    fn header_scenarios_are_enforced() {
        let mut values = fixture_values();
        values[0]["Scenario"] = "space travel".into();
        assert!(matches!(
            Dataset::parse(&to_text(true, &values)),
            Err(DatasetError::Decode {
                field: Some("Scenario"),
                ..
            })
        ));
        assert!(Dataset::parse(&to_text(false, &values)).is_ok());
    }
}
