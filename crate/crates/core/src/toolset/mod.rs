//! The tool set and its deterministic mock implementations.

mod registry;
mod world;

use thiserror::Error;

pub use registry::{registry_default, validate_args, ArgViolation, ParamSpec, ToolDescriptor, ToolRegistry};
pub use world::{
    default_response_text, fixture_default, invoke, AgendaEvent, CannedResponse, FailureRule, Location, ResolvedArgs,
    ToolResult, WeatherEntry, WorldFixture,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("tool {tool:?} failed: {message}")]
    SimulatedFailure { tool: String, message: String },
    #[error("fixture has no value for field {field:?} of tool {tool:?}")]
    FixtureIncomplete { tool: String, field: String },
    #[error("invalid tool registry: {0}")]
    Config(String),
    #[error("invalid world fixture: {0}")]
    Fixture(String),
}
