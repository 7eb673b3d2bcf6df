//! Runtime and benchmark harness for context-aware proactive agents.
//!
//! The pipeline turns sensory and persona context into a proactive score and
//! a tool chain through a pluggable text-generation backend, runs the chain
//! against a deterministic mock tool world, and scores predictions against
//! annotated samples.

pub mod chainlang;
pub mod dataset;
pub mod domain;
pub mod evalsuite;
pub mod executor;
pub mod par;
pub mod reasoner;
pub mod toolset;
