//! From context to decision: prompt assembly, text-generation backends,
//! completion parsing, gating and response synthesis.

mod backend;
mod parse;
mod perception;
mod pipeline;
mod prompt;

pub use backend::{
    connect, prompt_digest, read_credential, BackendConfig, BackendError, BackendKind, FixedStub, GenerationRequest,
    RemoteBackend, ReplayBackend, RetryPolicy, TextBackend, TranscriptEntry,
};
pub use parse::{canonical_completion, parse_output, ParseFailure, ParseStatus, ParsedOutput, Payload};
pub use perception::{
    extract_audio, extract_visual, MediaInput, PerceptionClient, PerceptionError, VISUAL_CONTEXT_PROMPT,
};
pub use pipeline::{ground_truth_transcript, template_response, Reasoner, ResponseSource, SampleRun};
pub use prompt::{
    build_prompt, build_runtime_prompt, build_static_prompt, build_synthesis_prompt, personas_section, render_trace,
    tool_block, toolset_section, PromptBundle, INSTRUCTIONS, NO_PERSONA_MARKER, OUTPUT_FORMAT, SYNTHESIS_INSTRUCTIONS,
};
