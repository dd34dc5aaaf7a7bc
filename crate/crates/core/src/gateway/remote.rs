//! Minimal JSON-over-HTTP client for a remote model service.
//!
//! Wire format: `POST <endpoint>` with a [`RemoteRequest`] body; the
//! service answers with a [`RemoteResponse`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, ModelResponse, Prompt};
use crate::deadline::Deadline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub template_id: String,
    pub slots: BTreeMap<String, String>,
    pub image_ref: Option<String>,
    pub max_tokens: u32,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub text: String,
    pub token_probs: Vec<f64>,
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Backend for RemoteBackend {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        let template = prompt.request.template_id.clone();
        let body = RemoteRequest {
            template_id: template.clone(),
            slots: prompt.request.slots.clone(),
            image_ref: prompt.request.image_ref.as_ref().map(|i| i.0.clone()),
            max_tokens: prompt.request.max_tokens,
            prompt: prompt.text.clone(),
        };
        let payload =
            serde_json::to_vec(&body).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let start = Instant::now();
        let request = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .config()
            .timeout_global(deadline.remaining())
            .build();
        let mut response = request.send(&payload[..]).map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::BackendTimeout(template.clone()),
            other => GatewayError::Transport(other.to_string()),
        })?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let parsed: RemoteResponse = serde_json::from_str(&text)
            .map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        if parsed.token_probs.is_empty() && !parsed.text.is_empty() {
            return Err(GatewayError::InvalidResponse("missing token_probs".into()));
        }
        let latency = parsed
            .latency_ms
            .map(Duration::from_millis)
            .unwrap_or_else(|| start.elapsed());
        Ok(ModelResponse {
            text: parsed.text,
            token_probs: parsed.token_probs,
            latency,
        })
    }
}
