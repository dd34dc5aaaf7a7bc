use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{cosine, l2_normalize, rank_order, HitPayload, SearchError, SearchHit, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgEntry {
    #[serde(rename = "embedding", alias = "image_embedding")]
    pub image_embedding: Vec<f64>,
    pub entity_name: String,
    #[serde(default)]
    pub attributes: IndexMap<String, String>,
    pub url: String,
}

/// Immutable image-KG index. Embeddings are normalized on ingest and
/// attribute keys lowercased.
#[derive(Debug, Clone)]
pub struct KgIndex {
    dim: usize,
    entries: Vec<KgEntry>,
}

impl KgIndex {
    pub fn from_entries(entries: Vec<KgEntry>) -> Result<Self, SearchError> {
        let mut index = Self {
            dim: 0,
            entries: Vec::with_capacity(entries.len()),
        };
        let mut seen = HashSet::new();
        for (i, e) in entries.into_iter().enumerate() {
            index
                .push(e, &mut seen)
                .map_err(|message| SearchError::Parse {
                    line: i + 1,
                    message,
                })?;
        }
        Ok(index)
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, SearchError> {
        let mut index = Self {
            dim: 0,
            entries: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: KgEntry = serde_json::from_str(&line).map_err(|e| SearchError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            index
                .push(entry, &mut seen)
                .map_err(|message| SearchError::Parse {
                    line: i + 1,
                    message,
                })?;
        }
        Ok(index)
    }

    pub fn ingest(path: impl AsRef<Path>) -> Result<Self, SearchError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    fn push(&mut self, mut entry: KgEntry, seen: &mut HashSet<String>) -> Result<(), String> {
        if entry.image_embedding.is_empty() {
            return Err("empty embedding".into());
        }
        if self.entries.is_empty() {
            self.dim = entry.image_embedding.len();
        } else if entry.image_embedding.len() != self.dim {
            return Err(format!(
                "embedding dimension {} differs from {}",
                entry.image_embedding.len(),
                self.dim
            ));
        }
        if l2_normalize(&mut entry.image_embedding) == 0.0 {
            return Err("zero embedding".into());
        }
        if !seen.insert(entry.url.clone()) {
            return Err(format!("duplicate url {}", entry.url));
        }
        entry.attributes = entry
            .attributes
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        self.entries.push(entry);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KgEntry] {
        &self.entries
    }

    pub fn search(&self, embedding: &[f64], k: usize) -> Result<Vec<SearchHit>, SearchError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        if embedding.len() != self.dim {
            return Err(SearchError::DimensionMismatch {
                expected: self.dim,
                got: embedding.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(embedding, &e.image_embedding)))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, &self.entries[a.0].url, b.1, &self.entries[b.0].url));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, score)| SearchHit {
                source: Source::ImageKg,
                score,
                payload: HitPayload::Kg(self.entries[i].clone()),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(url: &str, emb: Vec<f64>) -> KgEntry {
        KgEntry {
            image_embedding: emb,
            entity_name: url.to_uppercase(),
            attributes: IndexMap::from([("Brand".to_string(), "Acme".to_string())]),
            url: url.into(),
        }
    }

    fn basis(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_embedding_first_with_score_one() {
        let idx =
            KgIndex::from_entries(vec![entry("b", basis(0, 4)), entry("a", basis(1, 4))]).unwrap();
        let hits = idx.search(&basis(1, 4), 2).unwrap();
        assert_eq!(hits[0].url(), "a");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_ties_break_by_url() {
        let idx = KgIndex::from_entries(vec![
            entry("c", basis(0, 4)),
            entry("a", basis(1, 4)),
            entry("b", basis(2, 4)),
        ])
        .unwrap();
        let hits = idx.search(&basis(3, 4), 3).unwrap();
        assert!(hits.iter().all(|h| h.score == 0.0));
        let urls: Vec<&str> = hits.iter().map(|h| h.url()).collect();
        assert_eq!(urls, vec!["a", "b", "c"]);
    }

    #[test]
    fn k_zero_is_empty_and_dimension_checked() {
        let idx = KgIndex::from_entries(vec![entry("a", basis(0, 4))]).unwrap();
        assert!(idx.search(&basis(0, 4), 0).unwrap().is_empty());
        assert!(matches!(
            idx.search(&[1.0, 0.0], 1),
            Err(SearchError::DimensionMismatch {
                expected: 4,
                got: 2
            })
        ));
    }

    #[test]
    fn ingest_normalizes_and_lowercases() {
        let idx = KgIndex::from_entries(vec![entry("a", vec![3.0, 4.0])]).unwrap();
        let e = &idx.entries()[0];
        assert!((e.image_embedding[0] - 0.6).abs() < 1e-12);
        assert_eq!(e.attributes.get("brand").map(String::as_str), Some("Acme"));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let err = KgIndex::from_entries(vec![entry("a", basis(0, 4)), entry("b", basis(0, 3))])
            .unwrap_err();
        assert!(matches!(err, SearchError::Parse { line: 2, .. }));
    }
}
