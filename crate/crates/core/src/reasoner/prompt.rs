//! Prompt assembly. The static part (instructions, toolset, output format)
//! depends only on the registry; the runtime part carries the sample's
//! personas and context.

use std::fmt::Write as _;

use crate::domain::{ContextBundle, PersonaSet};
use crate::executor::{ExecutionTrace, StepOutcome};
use crate::toolset::{ToolDescriptor, ToolRegistry};

pub const INSTRUCTIONS: &str = include_str!("../../prompts/instructions.txt");
pub const OUTPUT_FORMAT: &str = include_str!("../../prompts/output_format.txt");
pub const SYNTHESIS_INSTRUCTIONS: &str = include_str!("../../prompts/synthesis.txt");

pub const NO_PERSONA_MARKER: &str = "No persona available.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub static_part: String,
    pub runtime_part: String,
    pub rendered: String,
}

impl PromptBundle {
    pub fn new(static_part: String, runtime_part: String) -> Self {
        let rendered = format!("{static_part}\n\n{runtime_part}");
        Self {
            static_part,
            runtime_part,
            rendered,
        }
    }
}

/// One definition block: name, description, parameters, output.
pub fn tool_block(tool: &ToolDescriptor) -> String {
    let mut out = format!("### {}\nDescription: {}\n", tool.name, tool.description);
    if tool.params.is_empty() {
        out.push_str("Parameters: None\n");
    } else {
        out.push_str("Parameters:\n");
        for p in &tool.params {
            let req = if p.required { "required" } else { "optional" };
            let _ = writeln!(out, "- {} (text, {req}): {}", p.name, p.description);
        }
    }
    let prose = tool.output.as_deref().unwrap_or("Result text.");
    let _ = writeln!(out, "Output: {prose} Fields: {}", tool.output_fields.join(", "));
    out
}

pub fn toolset_section(registry: &ToolRegistry) -> String {
    let mut out = String::from("## Toolset\n");
    for tool in registry.iter() {
        out.push('\n');
        out.push_str(&tool_block(tool));
    }
    out
}

pub fn build_static_prompt(registry: &ToolRegistry) -> String {
    format!(
        "## Task\n{}\n{}\n## Output format\n{}",
        INSTRUCTIONS.trim_end(),
        toolset_section(registry),
        OUTPUT_FORMAT.trim_end()
    )
}

pub fn personas_section(personas: &PersonaSet) -> String {
    let mut out = String::from("## User personas\n");
    if personas.is_empty() {
        out.push_str(NO_PERSONA_MARKER);
        out.push('\n');
    } else {
        for p in personas.entries() {
            let _ = writeln!(out, "- {p}");
        }
    }
    out
}

pub fn build_runtime_prompt(context: &ContextBundle, personas: &PersonaSet) -> String {
    format!(
        "{}\n## Context information\n{}\n",
        personas_section(personas),
        context.combined
    )
}

pub fn build_prompt(registry: &ToolRegistry, context: &ContextBundle, personas: &PersonaSet) -> PromptBundle {
    PromptBundle::new(build_static_prompt(registry), build_runtime_prompt(context, personas))
}

/// Tool results as numbered lines, for response synthesis.
pub fn render_trace(trace: &ExecutionTrace) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        let args: Vec<String> = step.args.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
        let result = match &step.outcome {
            StepOutcome::Ok(r) => r.text().to_owned(),
            StepOutcome::Error(e) => format!("failed: {e}"),
        };
        let _ = writeln!(
            out,
            "{}. {}({}) -> {}",
            step.index + 1,
            step.tool,
            args.join(", "),
            result
        );
    }
    out
}

pub fn build_synthesis_prompt(
    context: &ContextBundle,
    personas: &PersonaSet,
    thought: Option<&str>,
    trace: &ExecutionTrace,
) -> PromptBundle {
    let mut runtime = build_runtime_prompt(context, personas);
    let _ = write!(
        runtime,
        "\n## Your analysis\n{}\n\n## Tool results\n{}",
        thought.unwrap_or("(none)"),
        render_trace(trace)
    );
    PromptBundle::new(SYNTHESIS_INSTRUCTIONS.trim_end().to_owned(), runtime)
}
