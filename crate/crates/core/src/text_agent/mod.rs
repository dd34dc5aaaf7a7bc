//! Web query construction and textual evidence retrieval.

mod rewrite;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use rewrite::{enhance, fuse_object_label, rule_split};

use crate::gateway::{templates, CallContext, Gateway, GatewayError};
use crate::image_agent::VerifiedEntity;
use crate::preanswer::ReasoningTrace;
use crate::search::{fuse_max, SearchError, SearchHit, SearchIndex};
use crate::textproc::{content_tokens, last_json_object};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubQueryOrigin {
    Decomposition,
    Enhancement,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub text: String,
    pub origin: SubQueryOrigin,
    /// 1-based index of the reasoning step this sub-query serves.
    pub parent_step: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextAgentConfig {
    pub k_per_query: usize,
    pub k_total: usize,
}

impl Default for TextAgentConfig {
    fn default() -> Self {
        Self {
            k_per_query: 10,
            k_total: 10,
        }
    }
}

#[derive(Deserialize)]
struct DecomposedItem {
    text: String,
    #[serde(default)]
    step: Option<usize>,
}

/// Step sharing the most content tokens with `text`; ties go to the
/// earlier step. `None` when the trace has no steps.
fn closest_step(text: &str, steps: &[String]) -> Option<usize> {
    let words: std::collections::HashSet<String> = content_tokens(text).into_iter().collect();
    let mut best: Option<(usize, usize)> = None;
    for (i, s) in steps.iter().enumerate() {
        let overlap = content_tokens(s)
            .iter()
            .filter(|t| words.contains(*t))
            .count();
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((i + 1, overlap));
        }
    }
    best.map(|(i, _)| i)
}

pub struct TextAgent {
    gateway: Arc<Gateway>,
    index: Arc<SearchIndex>,
    config: TextAgentConfig,
}

impl TextAgent {
    pub fn new(gateway: Arc<Gateway>, index: Arc<SearchIndex>, config: TextAgentConfig) -> Self {
        Self {
            gateway,
            index,
            config,
        }
    }

    pub fn config(&self) -> &TextAgentConfig {
        &self.config
    }

    /// Break the query into per-step sub-queries and resolve deictic
    /// references with `visual_context`.
    ///
    /// An unparseable reply yields the original query. When the model is
    /// unreachable the rule splitter stands in.
    pub fn rephrase_and_split(
        &self,
        ctx: &CallContext,
        query: &str,
        trace: &ReasoningTrace,
        visual_context: Option<&str>,
    ) -> Vec<SubQuery> {
        let request = ctx
            .request(templates::DECOMPOSE)
            .slot("query", query)
            .slot("reasoning", trace.text())
            .slot("visual_context", visual_context.unwrap_or("unknown"));
        let original = || vec![(query.to_owned(), None)];
        let items: Vec<(String, Option<usize>)> =
            match self.gateway.generate_within(&request, ctx.deadline) {
                Ok(r) => last_json_object(&r.text)
                    .and_then(|m| m.get("sub_queries").cloned())
                    .and_then(|v| serde_json::from_value::<Vec<DecomposedItem>>(v).ok())
                    .map(|v| {
                        v.into_iter()
                            .filter(|i| !i.text.trim().is_empty())
                            .map(|i| (i.text.trim().to_owned(), i.step))
                            .collect::<Vec<_>>()
                    })
                    .filter(|v| !v.is_empty())
                    .unwrap_or_else(|| {
                        log::warn!("decomposition reply did not parse, using the original query");
                        original()
                    }),
                Err(e) if e.is_timeout() => original(),
                Err(
                    e @ (GatewayError::UnknownFixture { .. }
                    | GatewayError::Transport(_)
                    | GatewayError::InvalidResponse(_)),
                ) => {
                    log::warn!("decomposition unavailable ({e}), splitting by rule");
                    rule_split(query).into_iter().map(|t| (t, None)).collect()
                }
                Err(e) => {
                    log::warn!("decomposition failed: {e}");
                    original()
                }
            };
        let steps = &trace.steps;
        items
            .into_iter()
            .map(|(text, step)| {
                let parent_step = step
                    .filter(|s| (1..=steps.len()).contains(s))
                    .or_else(|| closest_step(&text, steps));
                let (text, origin) = match visual_context.map(|v| enhance(&text, v)) {
                    Some(e) if e != text => (e, SubQueryOrigin::Enhancement),
                    _ => (text, SubQueryOrigin::Decomposition),
                };
                SubQuery {
                    text,
                    origin,
                    parent_step,
                }
            })
            .collect()
    }

    /// Object-aware query combining the question with the verified entity.
    pub fn fuse_object(&self, query: &str, entity: &VerifiedEntity) -> SubQuery {
        SubQuery {
            text: fuse_object_label(query, &entity.entity_name),
            origin: SubQueryOrigin::Fusion,
            parent_step: None,
        }
    }

    /// Per-sub-query web search fused by max score per url.
    pub fn text_search(
        &self,
        subqueries: &[SubQuery],
        k_per_query: usize,
        k_total: usize,
    ) -> Result<Vec<SearchHit>, SearchError> {
        let lists = subqueries
            .par_iter()
            .map(|q| self.index.search_web(&q.text, k_per_query))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(fuse_max(lists, k_total))
    }

    /// `text_search` with the configured limits.
    pub fn search(&self, subqueries: &[SubQuery]) -> Result<Vec<SearchHit>, SearchError> {
        self.text_search(subqueries, self.config.k_per_query, self.config.k_total)
    }
}
