//! Deterministic mock retrieval APIs: web-text search and image-KG search
//! over local fixture corpora, scored by brute-force cosine similarity.

mod encoder;
mod kg;
mod web;

use serde::{Deserialize, Serialize};

pub use encoder::{cosine, l2_normalize, HashedBagEncoder, TextEncoder, DEFAULT_DIM};
pub use kg::{KgEntry, KgIndex};
pub use web::{HardNegativeConfig, WebDoc, WebIndex, MAX_WEB_RESULTS};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0} index has not been built")]
    IndexNotBuilt(&'static str),
    #[error("embedding dimension mismatch: index has {expected}, query has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Web,
    ImageKg,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Web => "web",
            Source::ImageKg => "image_kg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HitPayload {
    Web(WebDoc),
    Kg(KgEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub source: Source,
    pub score: f64,
    pub payload: HitPayload,
}

impl SearchHit {
    pub fn url(&self) -> &str {
        match &self.payload {
            HitPayload::Web(d) => &d.url,
            HitPayload::Kg(e) => &e.url,
        }
    }

    pub fn is_hard_negative(&self) -> bool {
        matches!(&self.payload, HitPayload::Web(d) if d.is_hard_negative)
    }
}

/// Descending score, ties by url ascending.
pub(crate) fn rank_order(
    a_score: f64,
    a_url: &str,
    b_score: f64,
    b_url: &str,
) -> std::cmp::Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_url.cmp(b_url))
}

/// Merge several hit lists: one hit per url keeping the maximum score,
/// ordered by descending score then url, truncated to `k`.
///
/// The result does not depend on the order of the input lists.
pub fn fuse_max(lists: impl IntoIterator<Item = Vec<SearchHit>>, k: usize) -> Vec<SearchHit> {
    let mut best: std::collections::HashMap<(Source, String), SearchHit> =
        std::collections::HashMap::new();
    for hit in lists.into_iter().flatten() {
        let key = (hit.source, hit.url().to_owned());
        match best.get(&key) {
            Some(existing) if existing.score >= hit.score => {}
            _ => {
                best.insert(key, hit);
            }
        }
    }
    let mut fused: Vec<SearchHit> = best.into_values().collect();
    fused.sort_by(|a, b| {
        rank_order(a.score, a.url(), b.score, b.url()).then(a.source.cmp(&b.source))
    });
    fused.truncate(k);
    fused
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub encoder: EncoderConfig,
    pub hard_negative: HardNegativeConfig,
}

/// The pair of retrieval APIs. Either side may be absent: web search is
/// unavailable in the single-source setting.
#[derive(Debug, Default)]
pub struct SearchIndex {
    pub web: Option<WebIndex>,
    pub kg: Option<KgIndex>,
}

impl SearchIndex {
    pub fn new(web: Option<WebIndex>, kg: Option<KgIndex>) -> Self {
        Self { web, kg }
    }

    pub fn search_web(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, SearchError> {
        self.web
            .as_ref()
            .ok_or(SearchError::IndexNotBuilt("web"))?
            .search(query, k)
    }

    pub fn search_image_kg(
        &self,
        embedding: &[f64],
        k: usize,
    ) -> Result<Vec<SearchHit>, SearchError> {
        self.kg
            .as_ref()
            .ok_or(SearchError::IndexNotBuilt("image-kg"))?
            .search(embedding, k)
    }
}
