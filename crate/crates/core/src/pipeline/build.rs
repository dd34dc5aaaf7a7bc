use std::sync::Arc;

use super::Pipeline;
use crate::answer::PostAnswer;
use crate::config::{BackendKind, Config, Implementation};
use crate::gateway::{
    Backend, FixtureStore, Gateway, GatewayError, MockBackend, RemoteBackend, ReplayBackend,
};
use crate::image_agent::{
    EntityVerifier, FixtureDetector, FixtureEntityVerifier, GatewayEntityVerifier, ImageAgent,
};
use crate::images::{ImageStore, ImageStoreError};
use crate::preanswer::{
    DcotAgent, DomainClassifier, GatewayDomainClassifier, KeywordCentroidClassifier,
};
use crate::rerank::{HashedMultiVectorEncoder, RerankError, Reranker, TokenOverlapScorer};
use crate::routing::{GatewayToolRouter, RuleToolRouter, ToolRouter};
use crate::search::{
    HashedBagEncoder, KgIndex, SearchError, SearchIndex, TextEncoder, WebIndex, DEFAULT_DIM,
};
use crate::text_agent::TextAgent;

#[derive(Debug, thiserror::Error)]
pub enum PipelineBuildError {
    #[error("web corpus: {0}")]
    WebCorpus(SearchError),
    #[error("image-KG corpus: {0}")]
    KgCorpus(SearchError),
    #[error("images: {0}")]
    Images(#[from] ImageStoreError),
    #[error("model fixtures: {0}")]
    Fixtures(#[from] GatewayError),
    #[error("reranker: {0}")]
    Rerank(#[from] RerankError),
    #[error("{0}")]
    Config(String),
}

/// Shared resources a pipeline is assembled from. Built once and reused
/// across every turn and worker.
#[derive(Clone)]
pub struct Components {
    pub gateway: Arc<Gateway>,
    pub index: Arc<SearchIndex>,
    pub images: Arc<ImageStore>,
    pub encoder: Arc<dyn TextEncoder>,
}

impl Components {
    /// Load corpora, images and the model backend named by `config`.
    /// Missing corpus paths leave that index unavailable.
    pub fn load(config: &Config) -> Result<Self, PipelineBuildError> {
        let encoder: Arc<dyn TextEncoder> = Arc::new(HashedBagEncoder::new(
            config.search.encoder.dim.unwrap_or(DEFAULT_DIM),
        ));
        let paths = &config.paths;
        let web = paths
            .web_corpus
            .as_ref()
            .map(|p| WebIndex::ingest(p, encoder.clone(), config.search.hard_negative))
            .transpose()
            .map_err(PipelineBuildError::WebCorpus)?;
        let kg = paths
            .kg_corpus
            .as_ref()
            .map(KgIndex::ingest)
            .transpose()
            .map_err(PipelineBuildError::KgCorpus)?;
        let images = match &paths.images {
            Some(p) => ImageStore::load(p)?,
            None => ImageStore::default(),
        };
        let fixtures = || -> Result<FixtureStore, PipelineBuildError> {
            Ok(match &paths.model_fixtures {
                Some(p) => FixtureStore::load(p)?,
                None => FixtureStore::default(),
            })
        };
        let backend: Arc<dyn Backend> = match config.gateway.backend {
            BackendKind::Mock => Arc::new(MockBackend::new(fixtures()?)),
            BackendKind::Replay => Arc::new(ReplayBackend::new(fixtures()?)),
            BackendKind::Remote => {
                let endpoint = config.gateway.endpoint.clone().ok_or_else(|| {
                    PipelineBuildError::Config("remote backend needs an endpoint".into())
                })?;
                Arc::new(RemoteBackend::new(endpoint))
            }
        };
        Ok(Self {
            gateway: Arc::new(Gateway::with_default_templates(backend)),
            index: Arc::new(SearchIndex::new(web, kg)),
            images: Arc::new(images),
            encoder,
        })
    }
}

impl Pipeline {
    pub fn from_config(config: &Config) -> Result<Self, PipelineBuildError> {
        Self::from_components(config, Components::load(config)?)
    }

    pub fn from_components(config: &Config, c: Components) -> Result<Self, PipelineBuildError> {
        let preanswer = Arc::new(config.preanswer.clone());
        let classifier: Arc<dyn DomainClassifier> = match config.components.domain_classifier {
            Implementation::Local => Arc::new(KeywordCentroidClassifier::new(
                &preanswer,
                c.encoder.clone(),
                Some(c.images.clone()),
            )),
            Implementation::Gateway => {
                Arc::new(GatewayDomainClassifier::new(c.gateway.clone(), &preanswer))
            }
        };
        let tool_router: Arc<dyn ToolRouter> = match config.components.tool_router {
            Implementation::Local => Arc::new(RuleToolRouter::new(config.routing.clone())),
            Implementation::Gateway => Arc::new(GatewayToolRouter::new(
                c.gateway.clone(),
                config.routing.clone(),
            )),
        };
        let verifier: Arc<dyn EntityVerifier> = match config.components.entity_verifier {
            Implementation::Local => Arc::new(FixtureEntityVerifier::new(c.images.clone())),
            Implementation::Gateway => Arc::new(GatewayEntityVerifier::new(c.gateway.clone())),
        };
        let image_agent = ImageAgent::new(
            c.gateway.clone(),
            c.index.clone(),
            Arc::new(FixtureDetector::new(c.images.clone())),
            verifier,
            c.encoder.clone(),
            config.image_agent.clone(),
        )
        .with_images(c.images.clone());
        let reranker = Reranker::new(
            Arc::new(HashedMultiVectorEncoder::new(
                c.encoder.clone(),
                Some(c.images.clone()),
            )),
            Arc::new(TokenOverlapScorer),
            config.rerank.clone(),
        )?;
        Ok(Pipeline::new(
            classifier,
            DcotAgent::new(c.gateway.clone(), preanswer),
            tool_router,
            image_agent,
            TextAgent::new(c.gateway.clone(), c.index.clone(), config.text_agent),
            reranker,
            PostAnswer::new(c.gateway.clone(), config.verifier),
            config.pipeline,
        ))
    }
}
