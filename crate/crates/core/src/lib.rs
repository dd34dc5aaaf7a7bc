//! Query-aware dynamic retrieval-augmented generation for visual question
//! answering.
//!
//! A turn flows through a domain-aware pre-answer, a three-way search
//! router, a tool router, image and text retrieval agents, a coarse-to-fine
//! evidence reranker, and a dual-verified answer generator. Every model call
//! goes through [`gateway::Gateway`], so the whole pipeline runs
//! deterministically against scripted fixtures.

pub mod answer;
pub mod config;
pub mod deadline;
pub mod eval;
pub mod gateway;
pub mod image_agent;
pub mod images;
pub mod pipeline;
pub mod preanswer;
pub mod rerank;
pub mod routing;
pub mod search;
pub mod text_agent;
pub mod textproc;

pub use config::Config;
pub use deadline::Deadline;
pub use pipeline::{Pipeline, PipelineTrace, QueryTurn, SessionState, Stage, TurnOutcome};

/// Canonical fallback response emitted whenever an answer cannot be trusted.
pub const FALLBACK_ANSWER: &str = "I don't know";

/// Opaque handle identifying an image in the configured image store.
#[derive(
    Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
