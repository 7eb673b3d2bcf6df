use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ToolError;
use crate::domain::is_identifier;

const DEFAULT_REGISTRY: &str = include_str!("../../config/tools.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub description: String,
    #[serde(default = "yes")]
    pub required: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolDescriptor {
    pub name: String,
    /// CamelCase name used in tool documentation tables.
    #[serde(default)]
    pub display_name: Option<String>,
    pub description: String,
    /// Prose description of what the tool returns.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub output_fields: Vec<String>,
}

impl ToolDescriptor {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn exposes(&self, field: &str) -> bool {
        self.output_fields.iter().any(|f| f == field)
    }
}

/// A problem found when checking call arguments against a descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param")]
pub enum ArgViolation {
    MissingParam(String),
    UnknownParam(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    tools: Vec<ToolDescriptor>,
}

/// The tool set the agent may call, keyed by snake_case name in
/// configuration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    tools: IndexMap<String, ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, ToolError> {
        let mut map = IndexMap::with_capacity(tools.len());
        for tool in tools {
            check_descriptor(&tool)?;
            let name = tool.name.clone();
            if map.insert(name.clone(), tool).is_some() {
                return Err(ToolError::Config(format!("duplicate tool name {name:?}")));
            }
        }
        Ok(Self { tools: map })
    }

    pub fn from_toml(text: &str) -> Result<Self, ToolError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| ToolError::Config(e.to_string()))?;
        Self::new(file.tools)
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn lookup(&self, name: &str) -> Result<&ToolDescriptor, ToolError> {
        self.tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_owned()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values()
    }
}

fn check_descriptor(tool: &ToolDescriptor) -> Result<(), ToolError> {
    let bad = |msg: String| Err(ToolError::Config(format!("tool {:?}: {msg}", tool.name)));
    if !is_identifier(&tool.name) {
        return bad("name is not an identifier".into());
    }
    let mut seen = BTreeSet::new();
    for p in &tool.params {
        if !is_identifier(&p.name) {
            return bad(format!("param {:?} is not an identifier", p.name));
        }
        if !seen.insert(p.name.as_str()) {
            return bad(format!("duplicate param {:?}", p.name));
        }
    }
    if tool.output_fields.is_empty() {
        return bad("output_fields is empty".into());
    }
    if !tool.exposes("text") {
        return bad("output_fields must include \"text\"".into());
    }
    if let Some(f) = tool.output_fields.iter().find(|f| !is_identifier(f)) {
        return bad(format!("output field {f:?} is not an identifier"));
    }
    Ok(())
}

/// The shipped twenty-tool registry.
pub fn registry_default() -> ToolRegistry {
    ToolRegistry::from_toml(DEFAULT_REGISTRY).expect("bundled tool registry is valid")
}

/// Checks that every required param is present and no unknown param is given.
pub fn validate_args<'a, I>(descriptor: &ToolDescriptor, arg_names: I) -> Vec<ArgViolation>
where
    I: IntoIterator<Item = &'a str>,
{
    let given: Vec<&str> = arg_names.into_iter().collect();
    let mut out: Vec<ArgViolation> = descriptor
        .params
        .iter()
        .filter(|p| p.required && !given.contains(&p.name.as_str()))
        .map(|p| ArgViolation::MissingParam(p.name.clone()))
        .collect();
    out.extend(
        given
            .iter()
            .filter(|g| descriptor.param(g).is_none())
            .map(|g| ArgViolation::UnknownParam((*g).to_owned())),
    );
    out
}
