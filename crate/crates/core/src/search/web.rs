use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{rank_order, HitPayload, SearchError, SearchHit, Source, TextEncoder};

/// Cap on results per web query.
pub const MAX_WEB_RESULTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebDoc {
    pub url: String,
    pub title: String,
    pub snippet: String,
    #[serde(default)]
    pub html: String,
    #[serde(default)]
    pub timestamp: String,
    #[serde(default)]
    pub is_hard_negative: bool,
}

impl WebDoc {
    /// Text the index embeds.
    pub fn embedding_text(&self) -> String {
        format!("{} {}", self.title, self.snippet)
    }
}

/// Hard-negative injection. `rate` is negatives per positive: 0.5 places one
/// hard negative after every two positives; 0 disables injection and ranks
/// flagged documents like any other.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HardNegativeConfig {
    pub rate: f64,
}

impl HardNegativeConfig {
    pub fn every(&self) -> Option<usize> {
        (self.rate > 0.0).then(|| ((1.0 / self.rate).round() as usize).max(1))
    }
}

/// Immutable web-text index.
pub struct WebIndex {
    docs: Vec<WebDoc>,
    embeddings: Vec<Vec<f64>>,
    encoder: Arc<dyn TextEncoder>,
    hard_negative: HardNegativeConfig,
}

impl std::fmt::Debug for WebIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebIndex")
            .field("docs", &self.docs.len())
            .field("dim", &self.encoder.dim())
            .field("hard_negative", &self.hard_negative)
            .finish()
    }
}

impl WebIndex {
    pub fn from_docs(
        docs: Vec<WebDoc>,
        encoder: Arc<dyn TextEncoder>,
        hard_negative: HardNegativeConfig,
    ) -> Result<Self, SearchError> {
        let mut seen = HashSet::new();
        for (i, d) in docs.iter().enumerate() {
            validate(d, &mut seen).map_err(|message| SearchError::Parse {
                line: i + 1,
                message,
            })?;
        }
        let embeddings = docs
            .iter()
            .map(|d| encoder.embed(&d.embedding_text()))
            .collect();
        Ok(Self {
            docs,
            embeddings,
            encoder,
            hard_negative,
        })
    }

    pub fn from_reader(
        reader: impl BufRead,
        encoder: Arc<dyn TextEncoder>,
        hard_negative: HardNegativeConfig,
    ) -> Result<Self, SearchError> {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: WebDoc = serde_json::from_str(&line).map_err(|e| SearchError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            validate(&doc, &mut seen).map_err(|message| SearchError::Parse {
                line: i + 1,
                message,
            })?;
            docs.push(doc);
        }
        let embeddings = docs
            .iter()
            .map(|d| encoder.embed(&d.embedding_text()))
            .collect();
        Ok(Self {
            docs,
            embeddings,
            encoder,
            hard_negative,
        })
    }

    pub fn ingest(
        path: impl AsRef<Path>,
        encoder: Arc<dyn TextEncoder>,
        hard_negative: HardNegativeConfig,
    ) -> Result<Self, SearchError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file), encoder, hard_negative)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[WebDoc] {
        &self.docs
    }

    pub fn encoder(&self) -> &Arc<dyn TextEncoder> {
        &self.encoder
    }

    /// Top-`k` documents by cosine similarity, `k` capped at
    /// [`MAX_WEB_RESULTS`], with hard negatives interleaved when enabled.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let k = k.min(MAX_WEB_RESULTS);
        if k == 0 || self.docs.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.encoder.embed(query);
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i, super::cosine(&q, e)))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, &self.docs[a.0].url, b.1, &self.docs[b.0].url));

        let hit = |(i, score): (usize, f64)| SearchHit {
            source: Source::Web,
            score,
            payload: HitPayload::Web(self.docs[i].clone()),
        };

        let Some(every) = self.hard_negative.every() else {
            return Ok(scored.into_iter().take(k).map(hit).collect());
        };
        let (negatives, positives): (Vec<_>, Vec<_>) = scored
            .into_iter()
            .partition(|(i, _)| self.docs[*i].is_hard_negative);
        Ok(interleave(&positives, &negatives, every, k)
            .into_iter()
            .map(hit)
            .collect())
    }
}

/// Place one negative after every `every` positives. When either stream
/// runs dry the other fills the remaining slots.
pub(crate) fn interleave<T: Copy>(
    positives: &[T],
    negatives: &[T],
    every: usize,
    k: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(k);
    let (mut pi, mut ni, mut run) = (0, 0, 0);
    while out.len() < k && (pi < positives.len() || ni < negatives.len()) {
        let take_negative = ni < negatives.len() && (run == every || pi == positives.len());
        if take_negative {
            out.push(negatives[ni]);
            ni += 1;
            run = 0;
        } else {
            out.push(positives[pi]);
            pi += 1;
            run += 1;
        }
    }
    out
}

fn validate(doc: &WebDoc, seen: &mut HashSet<String>) -> Result<(), String> {
    if doc.snippet.trim().is_empty() {
        return Err(format!("document {} has an empty snippet", doc.url));
    }
    if !seen.insert(doc.url.clone()) {
        return Err(format!("duplicate url {}", doc.url));
    }
    Ok(())
}
