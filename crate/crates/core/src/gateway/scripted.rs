//! Deterministic backends for tests and offline replay.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CallError, ModelRequest, ModelResponse, RequestKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub kind: RequestKind,
    /// Copy of the prompt, for people reading the file. Not used for lookup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: ModelResponse,
}

/// Canned responses keyed by request fingerprint.
///
/// `defaults` optionally answers any request of a kind that has no entry;
/// without one, an unmatched fingerprint is a transcript miss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub entries: BTreeMap<String, TranscriptEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<RequestKind, ModelResponse>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, req: &ModelRequest, response: ModelResponse) {
        self.entries.insert(
            req.fingerprint(),
            TranscriptEntry {
                kind: req.kind,
                prompt: Some(req.prompt.clone()),
                response,
            },
        );
    }

    pub fn set_default(&mut self, kind: RequestKind, response: ModelResponse) {
        self.defaults.insert(kind, response);
    }

    pub fn lookup(&self, req: &ModelRequest) -> Result<ModelResponse, CallError> {
        let fingerprint = req.fingerprint();
        if let Some(entry) = self.entries.get(&fingerprint) {
            return Ok(entry.response.clone());
        }
        self.defaults
            .get(&req.kind)
            .cloned()
            .ok_or(CallError::TranscriptMiss { fingerprint })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Serves responses from a [`Transcript`] and counts lookups.
#[derive(Debug)]
pub struct ScriptedBackend {
    transcript: Transcript,
    calls: AtomicU64,
    id: String,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        let id = format!("scripted:{}", &transcript.digest()[..12]);
        Self {
            transcript,
            calls: AtomicU64::new(0),
            id,
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, CallError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.transcript.lookup(req)
    }
}

type Responder = dyn Fn(&ModelRequest) -> Result<ModelResponse, CallError> + Send + Sync;

/// Backend driven by a closure. Handy for rule-based fakes.
pub struct FnBackend {
    id: String,
    responder: Box<Responder>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, responder: F) -> Self
    where
        F: Fn(&ModelRequest) -> Result<ModelResponse, CallError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            responder: Box::new(responder),
        }
    }
}

impl Backend for FnBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, CallError> {
        (self.responder)(req)
    }
}

/// Forwards to an inner backend and captures every successful exchange, so a
/// live or rule-based run can be frozen into a replayable transcript.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    recorded: Mutex<Transcript>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Transcript::new()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.recorded.lock().expect("recorder poisoned").clone()
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, CallError> {
        let mut resp = self.inner.call(req)?;
        resp.latency_ms = 0;
        self.recorded
            .lock()
            .expect("recorder poisoned")
            .insert(req, resp.clone());
        Ok(resp)
    }
}
