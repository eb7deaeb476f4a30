//! Three-stage synthesis of visually anchored reasoning data: describe the
//! image, reason over the description with self-reflection, then weave
//! explicit references back to the image into the chain.

mod anchor;
mod client;
mod error;
mod pipeline;
mod stages;
mod template;

pub use anchor::{count_anchors, insert_anchors, Lexicon, DEFAULT_LEXICON, INSERTED};
pub use client::{GenParams, GeneratorClient, HttpClient, MockClient, API_KEY_VAR};
pub use error::{Error, Result};
pub use pipeline::{
    demo_inputs, read_inputs, run_pipeline, synthesize, AnchorStats, Failure, PipelineConfig, PipelineSummary,
    Provenance, StageClients, SynthesisInput, SynthesisRecord,
};
pub use stages::{
    anchor_prompt, describe, describe_prompt, extract_answer, integrate_anchors, reason, reason_prompt, AnchorMode,
};
pub use template::{render, Templates, REFLECTION_PHRASES};
