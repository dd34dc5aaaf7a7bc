//! Coarse-to-fine evidence reranking and context assembly.

mod chunk;
mod score;

use std::cmp::Ordering;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chunk::{chunk_evidence, render_attributes, span_bounds, Chunk, ChunkingConfig};
pub use score::{FineScorer, HashedMultiVectorEncoder, MultiVectorEncoder, TokenOverlapScorer};

use crate::search::{cosine, SearchHit};
use crate::ImageRef;

/// Instruction passed to the fine scorer with every chunk.
pub const DEFAULT_INSTRUCTION: &str = include_str!("../../assets/rerank_instruction.txt");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RerankError {
    #[error("query encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("fine scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("invalid rerank config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub coarse: f64,
    pub fine: f64,
    /// `clamp01(coarse) * fine`.
    pub cumulative: f64,
}

impl ChunkScore {
    pub fn new(coarse: f64, fine: f64) -> Self {
        let fine = fine.clamp(0.0, 1.0);
        Self {
            coarse,
            fine,
            cumulative: coarse.clamp(0.0, 1.0) * fine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub k1: usize,
    pub k2: usize,
    pub tau_coarse: f64,
    pub tau_fine: f64,
    pub n_query_tokens: usize,
    pub max_chunk_chars: usize,
    pub chunk_overlap: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 5,
            tau_coarse: 0.2,
            tau_fine: 0.3,
            n_query_tokens: 8,
            max_chunk_chars: 512,
            chunk_overlap: 64,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        let bad = |m: &str| Err(RerankError::InvalidConfig(m.to_owned()));
        if self.k1 == 0 || self.k2 == 0 || self.n_query_tokens == 0 || self.max_chunk_chars == 0 {
            return bad("k1, k2, n_query_tokens and max_chunk_chars must be positive");
        }
        if self.k2 > self.k1 {
            return bad("k2 must not exceed k1");
        }
        if !(0.0..=1.0).contains(&self.tau_coarse) || !(0.0..=1.0).contains(&self.tau_fine) {
            return bad("thresholds must lie in [0, 1]");
        }
        if self.chunk_overlap >= self.max_chunk_chars {
            return bad("chunk_overlap must be smaller than max_chunk_chars");
        }
        Ok(())
    }

    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            max_chunk_chars: self.max_chunk_chars,
            overlap: self.chunk_overlap,
        }
    }

    /// Cumulative score a chunk must exceed to be kept.
    pub fn retention_bar(&self) -> f64 {
        self.tau_fine * self.tau_coarse
    }
}

/// Total order shared by every selection step: higher score first, then web
/// before image KG, then document position, then chunk id.
pub fn evidence_order(sa: f64, a: &Chunk, sb: f64, b: &Chunk) -> Ordering {
    sb.total_cmp(&sa)
        .then(a.source.cmp(&b.source))
        .then(a.position.cmp(&b.position))
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

/// Max over query vectors of the cosine to the chunk vector.
pub fn max_sim(query_vectors: &[Vec<f64>], chunk_vector: &[f64]) -> f64 {
    query_vectors
        .iter()
        .map(|q| cosine(q, chunk_vector))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Drop chunks below `tau`, then keep the `k` best.
pub fn select_coarse(scored: Vec<(Chunk, f64)>, tau: f64, k: usize) -> Vec<(Chunk, f64)> {
    let mut kept: Vec<(Chunk, f64)> = scored.into_iter().filter(|(_, s)| *s >= tau).collect();
    kept.sort_by(|(a, sa), (b, sb)| evidence_order(*sa, a, *sb, b));
    kept.truncate(k);
    kept
}

/// Keep chunks whose cumulative score exceeds `bar`, then the `k` best.
pub fn select_fine(
    scored: Vec<(Chunk, ChunkScore)>,
    bar: f64,
    k: usize,
) -> Vec<(Chunk, ChunkScore)> {
    let mut kept: Vec<(Chunk, ChunkScore)> = scored
        .into_iter()
        .filter(|(_, s)| s.cumulative > bar)
        .collect();
    kept.sort_by(|(a, sa), (b, sb)| evidence_order(sa.cumulative, a, sb.cumulative, b));
    kept.truncate(k);
    kept
}

/// Final evidence string with its ordered chunks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub text: String,
    pub chunks: Vec<(Chunk, ChunkScore)>,
}

impl AssembledContext {
    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

pub fn render_chunk(chunk: &Chunk) -> String {
    format!(
        "[{}:{}]\n{}",
        chunk.source.as_str(),
        chunk.doc_url,
        chunk.text
    )
}

/// Sort the selection and join the rendered chunks with blank lines.
pub fn assemble_context(mut selected: Vec<(Chunk, ChunkScore)>) -> AssembledContext {
    selected.sort_by(|(a, sa), (b, sb)| evidence_order(sa.cumulative, a, sb.cumulative, b));
    let text = selected
        .iter()
        .map(|(c, _)| render_chunk(c))
        .collect::<Vec<_>>()
        .join("\n\n");
    AssembledContext {
        text,
        chunks: selected,
    }
}

pub struct Reranker {
    encoder: Arc<dyn MultiVectorEncoder>,
    scorer: Arc<dyn FineScorer>,
    config: RerankConfig,
    instruction: String,
}

impl Reranker {
    pub fn new(
        encoder: Arc<dyn MultiVectorEncoder>,
        scorer: Arc<dyn FineScorer>,
        config: RerankConfig,
    ) -> Result<Self, RerankError> {
        config.validate()?;
        Ok(Self {
            encoder,
            scorer,
            config,
            instruction: DEFAULT_INSTRUCTION.trim().to_owned(),
        })
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = instruction.into();
        self
    }

    pub fn config(&self) -> &RerankConfig {
        &self.config
    }

    pub fn chunk_evidence(&self, hits: &[SearchHit]) -> Vec<Chunk> {
        chunk_evidence(hits, &self.config.chunking())
    }

    pub fn coarse_score(
        &self,
        question: &str,
        image: Option<&ImageRef>,
        chunks: Vec<Chunk>,
    ) -> Result<Vec<(Chunk, f64)>, RerankError> {
        if chunks.is_empty() {
            return Ok(Vec::new());
        }
        let queries = self
            .encoder
            .encode_query(question, image, self.config.n_query_tokens)?;
        if queries.len() != self.config.n_query_tokens {
            return Err(RerankError::EncoderUnavailable(format!(
                "expected {} query vectors, got {}",
                self.config.n_query_tokens,
                queries.len()
            )));
        }
        let scored = chunks
            .into_par_iter()
            .map(|c| {
                let v = self.encoder.encode_chunk(&c.text)?;
                let s = max_sim(&queries, &v);
                Ok((c, s))
            })
            .collect::<Result<Vec<_>, RerankError>>()?;
        Ok(select_coarse(
            scored,
            self.config.tau_coarse,
            self.config.k1,
        ))
    }

    /// Fine scores for the coarse survivors. If the scorer is unavailable
    /// the coarse score stands in for the fine score.
    pub fn fine_score(
        &self,
        question: &str,
        survivors: Vec<(Chunk, f64)>,
    ) -> Vec<(Chunk, ChunkScore)> {
        let fine: Result<Vec<f64>, RerankError> = survivors
            .par_iter()
            .map(|(c, _)| self.scorer.score(question, &c.text, &self.instruction))
            .collect();
        let fine = fine.unwrap_or_else(|e| {
            log::warn!("fine scorer failed, using coarse scores: {e}");
            survivors.iter().map(|(_, s)| s.clamp(0.0, 1.0)).collect()
        });
        let scored = survivors
            .into_iter()
            .zip(fine)
            .map(|((c, coarse), f)| (c, ChunkScore::new(coarse, f)))
            .collect();
        select_fine(scored, self.config.retention_bar(), self.config.k2)
    }

    /// Chunk, score and assemble the evidence for one question.
    pub fn rerank(
        &self,
        question: &str,
        image: Option<&ImageRef>,
        hits: &[SearchHit],
    ) -> Result<AssembledContext, RerankError> {
        let chunks = self.chunk_evidence(hits);
        let survivors = self.coarse_score(question, image, chunks)?;
        Ok(assemble_context(self.fine_score(question, survivors)))
    }
}
