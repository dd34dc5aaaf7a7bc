//! Fixture-backed backends: scripted mock, replay, and recording.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, ModelResponse, Prompt};
use crate::deadline::Deadline;

/// One line of a fixture JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub template_id: String,
    pub fixture_key: String,
    pub text: String,
    pub token_probs: Vec<f64>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl FixtureEntry {
    pub fn new(
        template_id: impl Into<String>,
        fixture_key: impl Into<String>,
        text: impl Into<String>,
        token_probs: Vec<f64>,
    ) -> Self {
        Self {
            template_id: template_id.into(),
            fixture_key: fixture_key.into(),
            text: text.into(),
            token_probs,
            latency_ms: 0,
        }
    }

    fn response(&self) -> ModelResponse {
        ModelResponse {
            text: self.text.clone(),
            token_probs: self.token_probs.clone(),
            latency: Duration::from_millis(self.latency_ms),
        }
    }
}

/// Immutable map from `(template_id, fixture_key)` to a scripted response.
#[derive(Debug, Clone, Default)]
pub struct FixtureStore {
    entries: HashMap<(String, String), FixtureEntry>,
}

impl FixtureStore {
    pub fn from_entries(
        entries: impl IntoIterator<Item = FixtureEntry>,
    ) -> Result<Self, GatewayError> {
        let mut store = Self::default();
        for (i, entry) in entries.into_iter().enumerate() {
            store.insert(entry).map_err(|message| GatewayError::Parse {
                line: i + 1,
                message,
            })?;
        }
        Ok(store)
    }

    fn insert(&mut self, entry: FixtureEntry) -> Result<(), String> {
        if entry.token_probs.is_empty() {
            return Err("token_probs must not be empty".into());
        }
        if let Some(p) = entry
            .token_probs
            .iter()
            .find(|p| !(**p > 0.0 && **p <= 1.0))
        {
            return Err(format!("token probability {p} outside (0, 1]"));
        }
        let key = (entry.template_id.clone(), entry.fixture_key.clone());
        if self.entries.contains_key(&key) {
            return Err(format!("duplicate fixture ({}, {})", key.0, key.1));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, GatewayError> {
        let mut store = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| GatewayError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            store.insert(entry).map_err(|message| GatewayError::Parse {
                line: i + 1,
                message,
            })?;
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn get(&self, template_id: &str, key: &str) -> Option<&FixtureEntry> {
        self.entries.get(&(template_id.to_owned(), key.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, prompt: &Prompt<'_>) -> Result<&FixtureEntry, GatewayError> {
        let key = prompt.fixture_key();
        self.get(&prompt.request.template_id, &key)
            .ok_or_else(|| GatewayError::UnknownFixture {
                template: prompt.request.template_id.clone(),
                key,
            })
    }
}

/// Scripted backend that also honors each fixture's latency.
#[derive(Debug, Clone)]
pub struct MockBackend {
    store: Arc<FixtureStore>,
}

impl MockBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self {
            store: Arc::new(store),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::new(FixtureStore::load(path)?))
    }
}

impl Backend for MockBackend {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        let entry = self.store.lookup(prompt)?;
        if entry.latency_ms > 0 {
            deadline
                .sleep(Duration::from_millis(entry.latency_ms))
                .map_err(|_| GatewayError::BackendTimeout(prompt.request.template_id.clone()))?;
        }
        Ok(entry.response())
    }
}

/// Returns recorded responses immediately, without simulating latency.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: Arc<FixtureStore>,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self {
            store: Arc::new(store),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::new(FixtureStore::load(path)?))
    }
}

impl Backend for ReplayBackend {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        _deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        Ok(self.store.lookup(prompt)?.response())
    }
}

/// Wraps another backend and captures every successful exchange as a
/// fixture entry.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Vec<FixtureEntry>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Vec::new()),
        }
    }

    /// Recorded entries, deduplicated by key with the first response kept.
    pub fn entries(&self) -> Vec<FixtureEntry> {
        let recorded = self.recorded.lock().unwrap_or_else(|e| e.into_inner());
        let mut seen = std::collections::HashSet::new();
        let mut out: Vec<FixtureEntry> = recorded
            .iter()
            .filter(|e| seen.insert((e.template_id.clone(), e.fixture_key.clone())))
            .cloned()
            .collect();
        out.sort_by(|a, b| (&a.template_id, &a.fixture_key).cmp(&(&b.template_id, &b.fixture_key)));
        out
    }

    pub fn store(&self) -> Result<FixtureStore, GatewayError> {
        FixtureStore::from_entries(self.entries())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), GatewayError> {
        for entry in self.entries() {
            let line = serde_json::to_string(&entry)
                .map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(
        &self,
        prompt: &Prompt<'_>,
        deadline: Deadline,
    ) -> Result<ModelResponse, GatewayError> {
        let response = self.inner.complete(prompt, deadline)?;
        let entry = FixtureEntry {
            template_id: prompt.request.template_id.clone(),
            fixture_key: prompt.fixture_key(),
            text: response.text.clone(),
            token_probs: response.token_probs.clone(),
            latency_ms: response.latency.as_millis() as u64,
        };
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_line() {
        let data = "{\"template_id\":\"a\",\"fixture_key\":\"k\",\"text\":\"t\",\"token_probs\":[1.0]}\n\nnot json\n";
        let err = FixtureStore::from_reader(data.as_bytes()).unwrap_err();
        assert!(matches!(err, GatewayError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_out_of_range_probability() {
        let data =
            "{\"template_id\":\"a\",\"fixture_key\":\"k\",\"text\":\"t\",\"token_probs\":[0.0]}\n";
        assert!(FixtureStore::from_reader(data.as_bytes()).is_err());
    }

    #[test]
    fn rejects_duplicate_keys() {
        let e = FixtureEntry {
            template_id: "a".into(),
            fixture_key: "k".into(),
            text: "t".into(),
            token_probs: vec![0.5],
            latency_ms: 0,
        };
        assert!(FixtureStore::from_entries(vec![e.clone(), e]).is_err());
    }
}
