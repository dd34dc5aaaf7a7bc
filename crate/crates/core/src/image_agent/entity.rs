use std::sync::Arc;

use crate::answer::TokenStats;
use crate::gateway::{templates, CallContext, Gateway};
use crate::images::ImageStore;
use crate::search::KgEntry;
use crate::textproc::fold;
use crate::ImageRef;

/// Scores in `[0, 1]` how well a KG entry matches the object in the image.
pub trait EntityVerifier: Send + Sync {
    fn match_score(&self, ctx: &CallContext, image: &ImageRef, query: &str, entry: &KgEntry)
        -> f64;
}

/// Reads scripted match scores from the image fixture; unlisted urls score 0.
pub struct FixtureEntityVerifier {
    images: Arc<ImageStore>,
}

impl FixtureEntityVerifier {
    pub fn new(images: Arc<ImageStore>) -> Self {
        Self { images }
    }
}

impl EntityVerifier for FixtureEntityVerifier {
    fn match_score(
        &self,
        _ctx: &CallContext,
        image: &ImageRef,
        _query: &str,
        entry: &KgEntry,
    ) -> f64 {
        self.images
            .get(image)
            .and_then(|f| f.visual_matches.get(&entry.url).copied())
            .unwrap_or(0.0)
    }
}

/// Asks the model per candidate. A "yes" scores the mean token probability
/// of the reply; "no" or any failure scores 0.
pub struct GatewayEntityVerifier {
    gateway: Arc<Gateway>,
}

impl GatewayEntityVerifier {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

impl EntityVerifier for GatewayEntityVerifier {
    fn match_score(
        &self,
        ctx: &CallContext,
        image: &ImageRef,
        query: &str,
        entry: &KgEntry,
    ) -> f64 {
        let request = ctx
            .sub_request(templates::ENTITY_VERIFY, &entry.url)
            .slot("query", query)
            .slot("entity_name", entry.entity_name.clone())
            .slot("url", entry.url.clone())
            .image(Some(image.clone()));
        let Ok(response) = self.gateway.generate_within(&request, ctx.deadline) else {
            return 0.0;
        };
        let verdict = fold(&response.text);
        if verdict.contains("match: yes") {
            TokenStats::from_probs(&response.token_probs).map_or(1.0, |s| s.s_mean)
        } else {
            0.0
        }
    }
}
