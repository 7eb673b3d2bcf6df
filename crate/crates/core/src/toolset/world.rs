//! Deterministic mock world the tools are executed against.
//!
//! A fixture file pins the clock, the user's location, a weather table, the
//! agenda, canned responses keyed by normalized arguments, and calls that
//! should fail. Anything not covered falls back to a text rendered from the
//! tool name and its sorted arguments, so every call has a stable result.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ToolError, ToolRegistry};

const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/world.json");

pub type ResolvedArgs = IndexMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
    pub city: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherEntry {
    pub city: String,
    pub time: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgendaEvent {
    pub title: String,
    pub time: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannedResponse {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
    pub fields: BTreeMap<String, String>,
}

/// Marks calls that fail. `args: None` fails every call of the tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRule {
    pub tool: String,
    #[serde(default)]
    pub args: Option<BTreeMap<String, String>>,
    #[serde(default = "default_failure_message")]
    pub message: String,
}

fn default_failure_message() -> String {
    "simulated failure".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFixture {
    /// Local wall-clock time, `YYYY-MM-DDTHH:MM[:SS]`.
    pub clock: String,
    pub location: Location,
    #[serde(default)]
    pub weather: Vec<WeatherEntry>,
    #[serde(default)]
    pub agenda: Vec<AgendaEvent>,
    #[serde(default)]
    pub canned: Vec<CannedResponse>,
    #[serde(default)]
    pub failures: Vec<FailureRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub fields: BTreeMap<String, String>,
}

impl ToolResult {
    pub fn text(&self) -> &str {
        self.fields.get("text").map(String::as_str).unwrap_or_default()
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

fn norm(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn normalized_key<'a, I>(args: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (&'a String, &'a String)>,
{
    let mut key: Vec<(String, String)> = args.into_iter().map(|(k, v)| (k.clone(), norm(v))).collect();
    key.sort();
    key
}

/// Fallback result text: tool name plus its arguments sorted by name.
pub fn default_response_text(tool: &str, args: &ResolvedArgs) -> String {
    let mut pairs: Vec<(&String, &String)> = args.iter().collect();
    pairs.sort();
    let rendered: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("[{tool}] ok ({})", rendered.join(", "))
}

/// The shipped world fixture.
pub fn fixture_default() -> WorldFixture {
    WorldFixture::from_json(DEFAULT_FIXTURE).expect("bundled world fixture is valid")
}

impl WorldFixture {
    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ToolError> {
        let fixture: WorldFixture = serde_json::from_str(text).map_err(|e| ToolError::Fixture(e.to_string()))?;
        fixture.clock()?;
        Ok(fixture)
    }

    pub fn clock(&self) -> Result<NaiveDateTime, ToolError> {
        ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"]
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(&self.clock, f).ok())
            .ok_or_else(|| ToolError::Fixture(format!("unparseable clock {:?}", self.clock)))
    }

    fn failure_for(&self, tool: &str, args: &ResolvedArgs) -> Option<&FailureRule> {
        let key = normalized_key(args);
        self.failures
            .iter()
            .find(|f| f.tool == tool && f.args.as_ref().is_none_or(|a| normalized_key(a) == key))
    }

    fn canned_for(&self, tool: &str, args: &ResolvedArgs) -> Option<&CannedResponse> {
        let key = normalized_key(args);
        self.canned
            .iter()
            .find(|c| c.tool == tool && normalized_key(&c.args) == key)
    }

    fn builtin(&self, tool: &str, args: &ResolvedArgs) -> Result<Option<BTreeMap<String, String>>, ToolError> {
        let mut fields = BTreeMap::new();
        match tool {
            "get_current_gps_coordinates" => {
                let loc = &self.location;
                fields.insert("city".into(), loc.city.clone());
                fields.insert(
                    "text".into(),
                    format!(
                        "Latitude {:.4}, longitude {:.4} ({})",
                        loc.latitude, loc.longitude, loc.city
                    ),
                );
            }
            "get_current_datetime" => {
                let now = self.clock()?;
                fields.insert("text".into(), now.format("%Y-%m-%d %H:%M (%A)").to_string());
            }
            "get_city_weather" => {
                let city = args.get("city").map(|s| norm(s)).unwrap_or_default();
                let time = args.get("time").map(|s| norm(s)).unwrap_or_default();
                match self
                    .weather
                    .iter()
                    .find(|w| norm(&w.city) == city && norm(&w.time) == time)
                {
                    Some(w) => {
                        fields.insert("text".into(), w.text.clone());
                    }
                    None => return Ok(None),
                }
            }
            "check_agenda_time_conflict" => {
                fields.insert("text".into(), self.agenda_summary(args.get("time").map(String::as_str)));
            }
            _ => return Ok(None),
        }
        Ok(Some(fields))
    }

    fn agenda_summary(&self, time: Option<&str>) -> String {
        let events = if self.agenda.is_empty() {
            "no events".to_owned()
        } else {
            self.agenda
                .iter()
                .map(|e| format!("{} at {}", e.title, e.time))
                .collect::<Vec<_>>()
                .join("; ")
        };
        match time.map(norm).filter(|t| !t.is_empty()) {
            None => format!("Agenda: {events}. No time given to check."),
            Some(t) => {
                let clash: Vec<&str> = self
                    .agenda
                    .iter()
                    .filter(|e| norm(&e.time).starts_with(&t))
                    .map(|e| e.title.as_str())
                    .collect();
                if clash.is_empty() {
                    format!("Agenda: {events}. No conflict at {t}.")
                } else {
                    format!("Agenda: {events}. Conflict at {t}: {}.", clash.join(", "))
                }
            }
        }
    }
}

/// Runs a mock tool. Results are a pure function of the fixture, tool name
/// and arguments. Canned entries take precedence over built-in behaviour.
pub fn invoke(
    registry: &ToolRegistry,
    fixture: &WorldFixture,
    name: &str,
    args: &ResolvedArgs,
) -> Result<ToolResult, ToolError> {
    let descriptor = registry.lookup(name)?;
    if let Some(rule) = fixture.failure_for(name, args) {
        return Err(ToolError::SimulatedFailure {
            tool: name.to_owned(),
            message: rule.message.clone(),
        });
    }

    let mut fields = match fixture.canned_for(name, args) {
        Some(c) => c.fields.clone(),
        None => fixture.builtin(name, args)?.unwrap_or_default(),
    };
    fields
        .entry("text".to_owned())
        .or_insert_with(|| default_response_text(name, args));

    if let Some(missing) = descriptor.output_fields.iter().find(|f| !fields.contains_key(*f)) {
        return Err(ToolError::FixtureIncomplete {
            tool: name.to_owned(),
            field: missing.clone(),
        });
    }
    Ok(ToolResult { fields })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolset::registry_default;

    fn fixture() -> WorldFixture {
        WorldFixture::from_json(
            r#"{
                "clock": "2025-01-15T09:00",
                "location": {"latitude": 22.3, "longitude": 114.2, "city": "Hong Kong"},
                "weather": [{"city": "Hong Kong", "time": "now", "text": "sunny"}],
                "agenda": [{"title": "Standup", "time": "2025-01-15T10:00"}],
                "canned": [{"tool": "google_search", "args": {"query": "Rust"}, "fields": {"text": "a language"}}],
                "failures": [{"tool": "book_uber"}]
            }"#,
        )
        .unwrap()
    }

    fn args(pairs: &[(&str, &str)]) -> ResolvedArgs {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn gps_exposes_city() {
        let r = invoke(
            &registry_default(),
            &fixture(),
            "get_current_gps_coordinates",
            &args(&[]),
        )
        .unwrap();
        assert_eq!(r.field("city"), Some("Hong Kong"));
        assert!(r.text().contains("Hong Kong"));
    }

    #[test]
    fn datetime_echoes_clock() {
        let r = invoke(&registry_default(), &fixture(), "get_current_datetime", &args(&[])).unwrap();
        assert!(r.text().contains("2025-01-15"), "{}", r.text());
        assert!(r.text().contains("Wednesday"));
    }

    #[test]
    fn weather_table_and_fallback() {
        let reg = registry_default();
        let w = fixture();
        let hit = invoke(
            &reg,
            &w,
            "get_city_weather",
            &args(&[("city", " hong kong"), ("time", "NOW")]),
        )
        .unwrap();
        assert_eq!(hit.text(), "sunny");
        let miss = invoke(
            &reg,
            &w,
            "get_city_weather",
            &args(&[("time", "later"), ("city", "Paris")]),
        )
        .unwrap();
        assert_eq!(miss.text(), "[get_city_weather] ok (city=Paris, time=later)");
    }

    #[test]
    fn canned_matches_normalized_args() {
        let r = invoke(
            &registry_default(),
            &fixture(),
            "google_search",
            &args(&[("query", "  rust ")]),
        )
        .unwrap();
        assert_eq!(r.text(), "a language");
    }

    #[test]
    fn agenda_conflicts() {
        let reg = registry_default();
        let w = fixture();
        let r = invoke(
            &reg,
            &w,
            "check_agenda_time_conflict",
            &args(&[("time", "2025-01-15T10:00")]),
        )
        .unwrap();
        assert!(r.text().contains("Conflict at"), "{}", r.text());
        let r = invoke(&reg, &w, "check_agenda_time_conflict", &args(&[("time", "2025-02-01")])).unwrap();
        assert!(r.text().contains("No conflict"));
    }

    #[test]
    fn failures_and_unknown_tools() {
        let reg = registry_default();
        let w = fixture();
        let err = invoke(&reg, &w, "book_uber", &args(&[("start", "a"), ("destination", "b")])).unwrap_err();
        assert!(matches!(err, ToolError::SimulatedFailure { .. }));
        assert_eq!(
            invoke(&reg, &w, "nope", &args(&[])).unwrap_err(),
            ToolError::UnknownTool("nope".into())
        );
    }

    #[test]
    fn canned_entries_must_cover_declared_fields() {
        let mut w = fixture();
        w.canned.push(CannedResponse {
            tool: "get_current_gps_coordinates".into(),
            args: BTreeMap::new(),
            fields: BTreeMap::from([("text".into(), "somewhere".into())]),
        });
        let err = invoke(&registry_default(), &w, "get_current_gps_coordinates", &args(&[])).unwrap_err();
        assert_eq!(
            err,
            ToolError::FixtureIncomplete {
                tool: "get_current_gps_coordinates".into(),
                field: "city".into()
            }
        );
    }

    #[test]
    fn bad_clock_is_rejected() {
        let text = r#"{"clock": "yesterday", "location": {"latitude": 0, "longitude": 0, "city": "X"}}"#;
        assert!(matches!(WorldFixture::from_json(text), Err(ToolError::Fixture(_))));
    }
}
