use std::collections::HashSet;
use std::sync::Arc;

use super::RerankError;
use crate::images::ImageStore;
use crate::search::TextEncoder;
use crate::textproc::{content_tokens, tokens};
use crate::ImageRef;

/// Encodes a question-image pair into several query vectors and a chunk
/// into one vector in the same space.
pub trait MultiVectorEncoder: Send + Sync {
    fn encode_query(
        &self,
        question: &str,
        image: Option<&ImageRef>,
        n: usize,
    ) -> Result<Vec<Vec<f64>>, RerankError>;
    fn encode_chunk(&self, text: &str) -> Result<Vec<f64>, RerankError>;
}

/// Point-wise relevance in `[0, 1]` of a chunk to the question.
pub trait FineScorer: Send + Sync {
    fn score(&self, question: &str, chunk: &str, instruction: &str) -> Result<f64, RerankError>;
}

/// Mock multi-vector encoder over a text encoder.
///
/// View 0 embeds the question with the image caption. The remaining views
/// embed single content tokens of that text, cycling when there are fewer
/// tokens than views.
pub struct HashedMultiVectorEncoder {
    encoder: Arc<dyn TextEncoder>,
    images: Option<Arc<ImageStore>>,
}

impl HashedMultiVectorEncoder {
    pub fn new(encoder: Arc<dyn TextEncoder>, images: Option<Arc<ImageStore>>) -> Self {
        Self { encoder, images }
    }
}

impl MultiVectorEncoder for HashedMultiVectorEncoder {
    fn encode_query(
        &self,
        question: &str,
        image: Option<&ImageRef>,
        n: usize,
    ) -> Result<Vec<Vec<f64>>, RerankError> {
        let caption = image
            .and_then(|i| self.images.as_ref()?.get(i))
            .map_or("", |f| f.caption.as_str());
        let joint = format!("{question} {caption}");
        let mut seen = HashSet::new();
        let words: Vec<String> = content_tokens(&joint)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        let mut views = Vec::with_capacity(n);
        views.push(self.encoder.embed(&joint));
        for j in 1..n {
            views.push(match words.is_empty() {
                true => views[0].clone(),
                false => self.encoder.embed(&words[(j - 1) % words.len()]),
            });
        }
        views.truncate(n);
        Ok(views)
    }

    fn encode_chunk(&self, text: &str) -> Result<Vec<f64>, RerankError> {
        Ok(self.encoder.embed(text))
    }
}

/// Fraction of the question's distinct content words found in the chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapScorer;

impl FineScorer for TokenOverlapScorer {
    fn score(&self, question: &str, chunk: &str, _instruction: &str) -> Result<f64, RerankError> {
        let q: HashSet<String> = content_tokens(question).into_iter().collect();
        if q.is_empty() {
            return Ok(0.0);
        }
        let c: HashSet<String> = tokens(chunk).into_iter().collect();
        Ok(q.iter().filter(|t| c.contains(*t)).count() as f64 / q.len() as f64)
    }
}
