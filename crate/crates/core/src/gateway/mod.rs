//! Model gateway: every generative or classification call to the
//! vision-language model goes through here.
//!
//! A [`Gateway`] pairs a [`TemplateRegistry`] with a [`Backend`]. Backends
//! are the scripted [`MockBackend`], the [`ReplayBackend`] over recorded
//! fixtures, the [`RecordingBackend`] wrapper, and the optional
//! [`RemoteBackend`] speaking JSON over HTTP.

mod fixture;
mod remote;
mod template;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::ImageRef;

pub use fixture::{FixtureEntry, FixtureStore, MockBackend, RecordingBackend, ReplayBackend};
pub use remote::{RemoteBackend, RemoteRequest, RemoteResponse};
pub use template::{templates, Template, TemplateRegistry};

/// Slot carrying the explicit fixture key for scripted backends.
pub const FIXTURE_KEY_SLOT: &str = "fixture_key";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{0}` is already registered")]
    DuplicateTemplate(String),
    #[error("template `{template}` is missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{0}` requires an image")]
    MissingImage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture for template `{template}` and key `{key}`")]
    UnknownFixture { template: String, key: String },
    #[error("backend timed out on template `{0}`")]
    BackendTimeout(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("fixture line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, GatewayError::BackendTimeout(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub template_id: String,
    pub slots: BTreeMap<String, String>,
    pub image_ref: Option<ImageRef>,
    pub max_tokens: u32,
}

impl ModelRequest {
    pub fn new(template_id: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            slots: BTreeMap::new(),
            image_ref: None,
            max_tokens: 512,
        }
    }

    pub fn slot(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.slots.insert(name.into(), value.into());
        self
    }

    pub fn fixture_key(self, key: impl Into<String>) -> Self {
        self.slot(FIXTURE_KEY_SLOT, key)
    }

    pub fn image(mut self, image: Option<ImageRef>) -> Self {
        self.image_ref = image;
        self
    }

    pub fn max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub token_probs: Vec<f64>,
    pub latency: Duration,
}

impl ModelResponse {
    /// Check the probability invariants: every probability in (0, 1].
    pub fn validate(&self) -> Result<(), GatewayError> {
        if let Some(p) = self.token_probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(GatewayError::InvalidResponse(format!(
                "token probability {p} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// A rendered request ready for a backend.
#[derive(Debug, Clone)]
pub struct Prompt<'a> {
    pub request: &'a ModelRequest,
    pub text: String,
}

impl Prompt<'_> {
    /// Key used by fixture-backed backends: the explicit fixture slot when
    /// present, otherwise a digest of the rendered prompt.
    pub fn fixture_key(&self) -> String {
        match self.request.slots.get(FIXTURE_KEY_SLOT) {
            Some(key) => key.clone(),
            None => {
                use sha2::{Digest, Sha256};
                let digest = Sha256::digest(self.text.as_bytes());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                format!("sha256:{hex}")
            }
        }
    }
}

/// Per-turn call context threaded through every gateway-backed operation.
#[derive(Debug, Clone)]
pub struct CallContext {
    /// Base fixture key; calls that repeat a template within one turn
    /// append a suffix.
    pub fixture_key: String,
    pub deadline: Deadline,
    /// Rendered dialogue history, empty on the first turn.
    pub history: String,
}

impl CallContext {
    pub fn new(fixture_key: impl Into<String>) -> Self {
        Self {
            fixture_key: fixture_key.into(),
            deadline: Deadline::never(),
            history: String::new(),
        }
    }

    pub fn with_deadline(mut self, deadline: Deadline) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn with_history(mut self, history: impl Into<String>) -> Self {
        self.history = history.into();
        self
    }

    /// Request for `template_id` carrying this context's key and history.
    pub fn request(&self, template_id: &str) -> ModelRequest {
        ModelRequest::new(template_id)
            .fixture_key(self.fixture_key.clone())
            .slot("history", self.history.clone())
    }

    /// Request keyed by `<fixture_key>|<suffix>`.
    pub fn sub_request(&self, template_id: &str, suffix: &str) -> ModelRequest {
        ModelRequest::new(template_id)
            .fixture_key(format!("{}|{}", self.fixture_key, suffix))
            .slot("history", self.history.clone())
    }
}

pub trait Backend: Send + Sync {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        (**self).complete(prompt, deadline)
    }
}

/// Template registry plus backend. Shareable across threads.
pub struct Gateway {
    registry: TemplateRegistry,
    backend: Arc<dyn Backend>,
}

impl Gateway {
    pub fn new(registry: TemplateRegistry, backend: Arc<dyn Backend>) -> Self {
        Self { registry, backend }
    }

    /// Gateway with the built-in prompt templates registered.
    pub fn with_default_templates(backend: Arc<dyn Backend>) -> Self {
        Self::new(TemplateRegistry::with_defaults(), backend)
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut TemplateRegistry {
        &mut self.registry
    }

    pub fn register_template(
        &mut self,
        template_id: &str,
        body: &str,
        required_slots: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<(), GatewayError> {
        self.registry.register(template_id, body, required_slots)
    }

    pub fn render(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let template = self
            .registry
            .get(&request.template_id)
            .ok_or_else(|| GatewayError::UnknownTemplate(request.template_id.clone()))?;
        if template.requires_image && request.image_ref.is_none() {
            return Err(GatewayError::MissingImage(request.template_id.clone()));
        }
        if request.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        template.render(&request.slots)
    }

    pub fn generate(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self.generate_within(request, Deadline::never())
    }

    pub fn generate_within(
        &self,
        request: &ModelRequest,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        let text = self.render(request)?;
        if deadline.expired() {
            return Err(GatewayError::BackendTimeout(request.template_id.clone()));
        }
        let prompt = Prompt { request, text };
        let response = self.backend.complete(&prompt, deadline)?;
        response.validate()?;
        Ok(response)
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("registry", &self.registry)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn umbrella_gateway() -> Gateway {
        let store = FixtureStore::from_entries(vec![FixtureEntry {
            template_id: "evaluator".into(),
            fixture_key: "umbrella-q1".into(),
            text: "1. The exact name of the object that the query \"What is written on these umbrellas?\" is about is umbrella.\n2. The text written on the umbrellas reads \"SUNNY DAYS\".\n{\"reasoning\": \"SUNNY DAYS\"}".into(),
            token_probs: vec![1.0, 1.0, 1.0],
            latency_ms: 0,
        }])
        .unwrap();
        Gateway::with_default_templates(Arc::new(MockBackend::new(store)))
    }

    fn evaluator_request() -> ModelRequest {
        ModelRequest::new("evaluator")
            .slot("query", "What is written on these umbrellas?")
            .slot("domain", "text")
            .fixture_key("umbrella-q1")
            .image(Some(ImageRef::new("umbrellas")))
    }

    #[test]
    fn mock_returns_scripted_fixture() {
        let gw = umbrella_gateway();
        let response = gw.generate(&evaluator_request()).unwrap();
        assert!(response.text.contains("SUNNY DAYS"));
        assert_eq!(response.token_probs, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn identical_requests_are_byte_identical() {
        let gw = umbrella_gateway();
        let a = gw.generate(&evaluator_request()).unwrap();
        let b = gw.generate(&evaluator_request()).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn replay_without_entry_is_unknown_fixture() {
        let gw =
            Gateway::with_default_templates(Arc::new(ReplayBackend::new(FixtureStore::default())));
        let err = gw.generate(&evaluator_request()).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownFixture { .. }), "{err}");
    }

    #[test]
    fn unknown_template_and_missing_slot() {
        let gw = umbrella_gateway();
        let err = gw.generate(&ModelRequest::new("nope")).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownTemplate(_)));
        let req = ModelRequest::new("evaluator")
            .slot("query", "q")
            .image(Some(ImageRef::new("x")));
        let err = gw.generate(&req).unwrap_err();
        assert!(
            matches!(err, GatewayError::MissingSlot { ref slot, .. } if slot == "domain"),
            "{err}"
        );
    }

    #[test]
    fn vision_template_requires_image() {
        let gw = umbrella_gateway();
        let req = evaluator_request().image(None);
        assert!(matches!(
            gw.generate(&req),
            Err(GatewayError::MissingImage(_))
        ));
    }

    #[test]
    fn mock_latency_is_bounded_by_deadline() {
        let store = FixtureStore::from_entries(vec![FixtureEntry {
            template_id: "evaluator".into(),
            fixture_key: "slow".into(),
            text: "x".into(),
            token_probs: vec![0.9],
            latency_ms: 5_000,
        }])
        .unwrap();
        let gw = Gateway::with_default_templates(Arc::new(MockBackend::new(store)));
        let req = evaluator_request().fixture_key("slow");
        let start = std::time::Instant::now();
        let err = gw
            .generate_within(&req, Deadline::after(Duration::from_millis(30)))
            .unwrap_err();
        assert!(err.is_timeout());
        assert!(start.elapsed() < Duration::from_millis(500));
    }

    #[test]
    fn mock_latency_is_honored() {
        let store = FixtureStore::from_entries(vec![FixtureEntry {
            template_id: "evaluator".into(),
            fixture_key: "k".into(),
            text: "x".into(),
            token_probs: vec![0.9],
            latency_ms: 40,
        }])
        .unwrap();
        let gw = Gateway::with_default_templates(Arc::new(MockBackend::new(store)));
        let start = std::time::Instant::now();
        let r = gw.generate(&evaluator_request().fixture_key("k")).unwrap();
        let took = start.elapsed();
        assert_eq!(r.latency, Duration::from_millis(40));
        assert!(
            took >= Duration::from_millis(40) && took < Duration::from_millis(60),
            "{took:?}"
        );
    }

    #[test]
    fn digest_key_without_fixture_slot() {
        let req = ModelRequest::new("t");
        let p = Prompt {
            request: &req,
            text: "hello".into(),
        };
        let key = p.fixture_key();
        assert!(key.starts_with("sha256:"));
        assert_eq!(key.len(), "sha256:".len() + 64);
    }
}
