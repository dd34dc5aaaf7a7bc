use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DomainSpec, PreAnswerConfig, CATCH_ALL_DOMAIN};
use crate::answer::TokenStats;
use crate::gateway::{templates, CallContext, Gateway};
use crate::images::ImageStore;
use crate::search::{cosine, TextEncoder};
use crate::textproc::{contains_phrase, normalize};
use crate::ImageRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainLabel {
    pub name: String,
    pub confidence: f64,
}

impl DomainLabel {
    pub fn other() -> Self {
        Self {
            name: CATCH_ALL_DOMAIN.into(),
            confidence: 0.0,
        }
    }
}

/// Centroid matches below this cosine are treated as hash collisions.
const CENTROID_MIN_SIMILARITY: f64 = 0.25;

/// Total: every input gets exactly one label from the taxonomy.
pub trait DomainClassifier: Send + Sync {
    fn classify(&self, ctx: &CallContext, query: &str, image: Option<&ImageRef>) -> DomainLabel;
}

/// Keyword votes first, nearest embedding centroid second, `other` last.
///
/// Query keyword hits count double relative to hits in the image caption.
pub struct KeywordCentroidClassifier {
    domains: Vec<DomainSpec>,
    centroids: Vec<Vec<f64>>,
    encoder: Arc<dyn TextEncoder>,
    images: Option<Arc<ImageStore>>,
}

impl KeywordCentroidClassifier {
    pub fn new(
        config: &PreAnswerConfig,
        encoder: Arc<dyn TextEncoder>,
        images: Option<Arc<ImageStore>>,
    ) -> Self {
        let centroids = config
            .domains
            .iter()
            .map(|d| {
                encoder.embed(&format!(
                    "{} {} {}",
                    d.name,
                    d.keywords.join(" "),
                    d.descriptors
                ))
            })
            .collect();
        Self {
            domains: config.domains.clone(),
            centroids,
            encoder,
            images,
        }
    }

    pub fn classify_text(&self, query: &str, caption: &str) -> DomainLabel {
        if normalize(query).is_empty() {
            return DomainLabel::other();
        }
        let votes: Vec<usize> = self
            .domains
            .iter()
            .map(|d| {
                d.keywords
                    .iter()
                    .map(|k| {
                        2 * usize::from(contains_phrase(query, k))
                            + usize::from(contains_phrase(caption, k))
                    })
                    .sum()
            })
            .collect();
        let total: usize = votes.iter().sum();
        if total > 0 {
            // First maximum wins so ties follow taxonomy order.
            let (best, count) =
                votes
                    .iter()
                    .enumerate()
                    .fold((0, 0), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
            return DomainLabel {
                name: self.domains[best].name.clone(),
                confidence: count as f64 / total as f64,
            };
        }
        let q = self.encoder.embed(&format!("{query} {caption}"));
        let mut best: Option<(usize, f64)> = None;
        for (i, (d, c)) in self.domains.iter().zip(&self.centroids).enumerate() {
            if d.name == CATCH_ALL_DOMAIN {
                continue;
            }
            let s = cosine(&q, c);
            if s >= CENTROID_MIN_SIMILARITY && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) => DomainLabel {
                name: self.domains[i].name.clone(),
                confidence: s.min(1.0),
            },
            None => DomainLabel::other(),
        }
    }
}

impl DomainClassifier for KeywordCentroidClassifier {
    fn classify(&self, _ctx: &CallContext, query: &str, image: Option<&ImageRef>) -> DomainLabel {
        let caption = image
            .and_then(|i| self.images.as_ref()?.get(i))
            .map(|f| f.caption.as_str())
            .unwrap_or("");
        self.classify_text(query, caption)
    }
}

/// Asks the model for a domain name; anything outside the taxonomy, or any
/// backend failure, maps to `other`.
pub struct GatewayDomainClassifier {
    gateway: Arc<Gateway>,
    taxonomy: Vec<String>,
}

impl GatewayDomainClassifier {
    pub fn new(gateway: Arc<Gateway>, config: &PreAnswerConfig) -> Self {
        Self {
            gateway,
            taxonomy: config.domains.iter().map(|d| d.name.clone()).collect(),
        }
    }
}

impl DomainClassifier for GatewayDomainClassifier {
    fn classify(&self, ctx: &CallContext, query: &str, image: Option<&ImageRef>) -> DomainLabel {
        if normalize(query).is_empty() {
            return DomainLabel::other();
        }
        let request = ctx
            .request(templates::DOMAIN_ROUTER)
            .slot("query", query)
            .slot("taxonomy", self.taxonomy.join(", "))
            .image(image.cloned());
        let Ok(response) = self.gateway.generate_within(&request, ctx.deadline) else {
            return DomainLabel::other();
        };
        let answer = normalize(&response.text);
        match self.taxonomy.iter().find(|t| normalize(t) == answer) {
            Some(name) => DomainLabel {
                name: name.clone(),
                confidence: TokenStats::from_probs(&response.token_probs).map_or(0.0, |s| s.s_mean),
            },
            None => DomainLabel::other(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::HashedBagEncoder;

    fn classifier() -> KeywordCentroidClassifier {
        KeywordCentroidClassifier::new(
            &PreAnswerConfig::default(),
            Arc::new(HashedBagEncoder::default()),
            None,
        )
    }

    #[test]
    fn integral_is_math() {
        let l = classifier().classify_text("What is the integral of x squared?", "");
        assert_eq!(l.name, "math");
    }

    #[test]
    fn empty_query_is_other() {
        assert_eq!(
            classifier().classify_text("  ", "a storefront"),
            DomainLabel::other()
        );
    }

    #[test]
    fn cafe_storefront_golden() {
        // Golden: "cafe" is a food keyword, the caption adds a shopping vote.
        let l = classifier().classify_text(
            "Who founded this cafe?",
            "storefront of a small coffee shop",
        );
        assert_eq!(l.name, "food");
        assert!((l.confidence - 0.75).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn centroid_fallback_without_keywords() {
        let l = classifier().classify_text("literature reading library", "");
        assert_eq!(l.name, "books");
    }

    #[test]
    fn unmatched_query_falls_back_to_other() {
        let l = classifier().classify_text("zzzz qqqq", "");
        assert_eq!(l.name, "other");
        assert_eq!(l.confidence, 0.0);
    }
}
