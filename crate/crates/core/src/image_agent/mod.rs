//! Visual grounding: find the queried object, locate it, look it up in the
//! image knowledge graph and keep only an entity that matches the picture.

mod entity;
mod objects;
mod regions;

use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use entity::{EntityVerifier, FixtureEntityVerifier, GatewayEntityVerifier};
pub use objects::{normalize_object_name, ObjectCandidate};
pub use regions::{FixtureDetector, Region, RegionDetector};

use crate::gateway::{CallContext, Gateway};
use crate::search::{
    cosine, fuse_max, HitPayload, KgEntry, SearchError, SearchHit, SearchIndex, TextEncoder,
};
use crate::ImageRef;

#[derive(Debug, thiserror::Error)]
pub enum ImageAgentError {
    #[error("no object candidates to select from")]
    EmptyCandidates,
    #[error("object name is empty")]
    EmptyObjectName,
    #[error("no regions to search with")]
    EmptyRegions,
    #[error("no detector output for image `{0}`")]
    DetectorUnavailable(String),
    #[error("image `{0}` is not in the image store")]
    UnknownImage(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Entity retrieved from the image KG and confirmed against the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedEntity {
    pub entity_name: String,
    pub kg_entry: KgEntry,
    pub match_score: f64,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageAgentConfig {
    pub object_num: usize,
    /// Hits kept per region before fusion.
    pub k_per_region: usize,
    /// Hits kept after fusion.
    pub k: usize,
    /// Minimum verifier match score for an entity to be accepted.
    pub entity_threshold: f64,
    /// Abstract concepts and actions dropped from object lists.
    pub blacklist: Vec<String>,
    /// Specific names mapped to their general category.
    pub categories: IndexMap<String, String>,
}

impl Default for ImageAgentConfig {
    fn default() -> Self {
        let categories = [
            ("bmw", "car"),
            ("audi", "car"),
            ("toyota", "car"),
            ("tesla", "car"),
            ("porsche", "car"),
            ("zara", "clothing brand"),
            ("nike", "clothing brand"),
            ("iphone", "smartphone"),
            ("pixel", "smartphone"),
            ("galaxy", "smartphone"),
            ("coca-cola", "drink"),
            ("coca cola", "drink"),
            ("pepsi", "drink"),
            ("starbucks", "cafe"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
        Self {
            object_num: 5,
            k_per_region: 10,
            k: 5,
            entity_threshold: 0.5,
            blacklist: strings(&[
                "emotion",
                "emotions",
                "relationship",
                "relationships",
                "happiness",
                "love",
                "friendship",
                "idea",
                "concept",
                "time",
                "weather",
                "atmosphere",
                "mood",
                "running",
                "walking",
                "shopping",
                "eating",
                "drinking",
                "driving",
                "talking",
                "sitting",
                "standing",
                "playing",
                "swimming",
                "cooking",
                "reading",
                "writing",
                "jumping",
                "flying",
            ]),
            categories,
        }
    }
}

/// Everything the visual toolchain found for one query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageEvidence {
    pub candidates: Vec<ObjectCandidate>,
    pub selected: Option<ObjectCandidate>,
    pub regions: Vec<Region>,
    pub hits: Vec<SearchHit>,
    pub entity: Option<VerifiedEntity>,
}

impl ImageEvidence {
    /// Human-readable description of the grounded object, used to rewrite
    /// text queries: attribute, category and entity name when known.
    pub fn visual_context(&self) -> Option<String> {
        let label = self.selected.as_ref().map(ObjectCandidate::label);
        match (&self.entity, label) {
            (Some(e), Some(l)) if !crate::textproc::contains_phrase(&e.entity_name, &l) => {
                Some(format!("{l} {}", e.entity_name))
            }
            (Some(e), _) => Some(e.entity_name.clone()),
            (None, l) => l,
        }
    }
}

pub struct ImageAgent {
    gateway: Arc<Gateway>,
    index: Arc<SearchIndex>,
    detector: Arc<dyn RegionDetector>,
    verifier: Arc<dyn EntityVerifier>,
    encoder: Arc<dyn TextEncoder>,
    images: Option<Arc<crate::images::ImageStore>>,
    config: ImageAgentConfig,
}

impl ImageAgent {
    pub fn new(
        gateway: Arc<Gateway>,
        index: Arc<SearchIndex>,
        detector: Arc<dyn RegionDetector>,
        verifier: Arc<dyn EntityVerifier>,
        encoder: Arc<dyn TextEncoder>,
        config: ImageAgentConfig,
    ) -> Self {
        Self {
            gateway,
            index,
            detector,
            verifier,
            encoder,
            images: None,
            config,
        }
    }

    /// Image store used to pick among same-name candidates by position.
    pub fn with_images(mut self, images: Arc<crate::images::ImageStore>) -> Self {
        self.images = Some(images);
        self
    }

    pub fn config(&self) -> &ImageAgentConfig {
        &self.config
    }

    /// Regions of `object_name`; falls back to the whole image when the
    /// detector has nothing.
    pub fn detect_regions(
        &self,
        image: &ImageRef,
        object_name: &str,
    ) -> Result<Vec<Region>, ImageAgentError> {
        if object_name.trim().is_empty() {
            return Err(ImageAgentError::EmptyObjectName);
        }
        match self.detector.detect(image, object_name) {
            Ok(regions) if !regions.is_empty() => Ok(regions),
            Ok(_) | Err(ImageAgentError::DetectorUnavailable(_)) => {
                self.detector.whole_image(image, object_name)
            }
            Err(e) => Err(e),
        }
    }

    /// Per-region KG searches fused by max score per url. Equal fused scores
    /// are ordered by how close the entity is to the text query.
    pub fn multi_image_search(
        &self,
        regions: &[Region],
        query: &str,
        k: usize,
    ) -> Result<Vec<SearchHit>, ImageAgentError> {
        if regions.is_empty() {
            return Err(ImageAgentError::EmptyRegions);
        }
        let per_region = self.config.k_per_region.max(k);
        let lists = regions
            .par_iter()
            .map(|r| self.index.search_image_kg(&r.embedding, per_region))
            .collect::<Result<Vec<_>, _>>()?;
        let mut fused = fuse_max(lists, usize::MAX);
        let q = self.encoder.embed(query);
        let text_sim = |h: &SearchHit| match &h.payload {
            HitPayload::Kg(e) => cosine(&q, &self.encoder.embed(&e.entity_name)),
            HitPayload::Web(d) => cosine(&q, &self.encoder.embed(&d.embedding_text())),
        };
        let mut keyed: Vec<(f64, SearchHit)> = fused.drain(..).map(|h| (text_sim(&h), h)).collect();
        keyed.sort_by(|(sa, a), (sb, b)| {
            b.score
                .total_cmp(&a.score)
                .then(sb.total_cmp(sa))
                .then_with(|| a.url().cmp(b.url()))
        });
        Ok(keyed.into_iter().map(|(_, h)| h).take(k).collect())
    }

    /// Highest-ranked KG hit the verifier accepts.
    pub fn select_entity(
        &self,
        ctx: &CallContext,
        hits: &[SearchHit],
        image: &ImageRef,
        query: &str,
    ) -> Option<VerifiedEntity> {
        hits.iter().find_map(|h| {
            let HitPayload::Kg(entry) = &h.payload else {
                return None;
            };
            let score = self
                .verifier
                .match_score(ctx, image, query, entry)
                .clamp(0.0, 1.0);
            (score >= self.config.entity_threshold).then(|| VerifiedEntity {
                entity_name: entry.entity_name.clone(),
                kg_entry: entry.clone(),
                match_score: score,
            })
        })
    }

    /// Full visual toolchain. Extraction or selection failures fall back to
    /// a whole-image search.
    pub fn run(
        &self,
        ctx: &CallContext,
        query: &str,
        image: &ImageRef,
    ) -> Result<ImageEvidence, ImageAgentError> {
        let candidates = self.extract_objects(ctx, image, query, self.config.object_num);
        let selected = match self.select_object(ctx, &candidates, query, image) {
            Ok(c) => Some(c),
            Err(ImageAgentError::EmptyCandidates) => None,
            Err(e) => return Err(e),
        };
        let regions = match &selected {
            Some(c) => {
                let all = self.detect_regions(image, &c.name)?;
                // Keep only instances carrying the chosen attribute, if any do.
                let matching: Vec<Region> = all
                    .iter()
                    .filter(|r| r.attribute.is_some() && r.attribute == c.distinguishing_attribute)
                    .cloned()
                    .collect();
                if matching.is_empty() {
                    all
                } else {
                    matching
                }
            }
            None => self.detector.whole_image(image, "image")?,
        };
        let hits = self.multi_image_search(&regions, query, self.config.k)?;
        let entity = self.select_entity(ctx, &hits, image, query);
        Ok(ImageEvidence {
            candidates,
            selected,
            regions,
            hits,
            entity,
        })
    }
}
