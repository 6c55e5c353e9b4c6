//! Uniform access to describe / classify / embed capabilities.
//!
//! A [`Backend`] performs one attempt. The [`Gateway`] wrapped around it owns
//! validation, the response cache, throttling, retries with exponential
//! backoff, and the per-call log that ends up in the run manifest.

mod cache;
mod http;
mod limit;
mod request;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use cache::{FileCache, MemoryCache, ResponseCache};
pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use limit::{InFlightCap, Throttle};
pub use request::{Decoding, ImagePayload, ModelRequest, ModelResponse, RequestKind, Usage};
pub use scripted::{FnBackend, RecordingBackend, ScriptedBackend, Transcript};

/// Outcome of a single failed attempt, as reported by a backend.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    RateLimited { retry_after: Option<Duration> },
    /// Worth retrying: connection resets, 5xx, timeouts.
    Transient(String),
    /// Not worth retrying: 4xx other than 429, undecodable bodies.
    Permanent(String),
    TranscriptMiss { fingerprint: String },
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for {kind} request {fingerprint}")]
    TranscriptMiss { kind: RequestKind, fingerprint: String },
    #[error("backend {backend} kept rate limiting after {attempts} attempts")]
    RateLimited { backend: String, attempts: u32 },
    #[error("backend {backend} failed after {attempts} attempts: {message}")]
    BackendFailure {
        backend: String,
        attempts: u32,
        message: String,
    },
}

impl GatewayError {
    /// Transport-level exhaustion, as opposed to a caller or transcript bug.
    pub fn is_exhaustion(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. } | GatewayError::BackendFailure { .. }
        )
    }
}

/// One attempt against a model service.
pub trait Backend: Send + Sync {
    /// Identity recorded in run manifests.
    fn id(&self) -> String;

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, CallError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32, hint: Option<Duration>) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.max_delay_ms);
        let backoff = Duration::from_millis(exp);
        match hint {
            Some(h) => h.min(Duration::from_millis(self.max_delay_ms)).max(backoff),
            None => backoff,
        }
    }
}

/// Per-call log entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub fingerprint: String,
    pub kind: RequestKind,
    pub model_id: String,
    pub latency_ms: u64,
    pub retries: u32,
    pub cache_hit: bool,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    throttle: Throttle,
    cache: Option<Arc<dyn ResponseCache>>,
    log: Mutex<Vec<CallRecord>>,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            throttle: Throttle::unlimited(),
            cache: None,
            log: Mutex::new(Vec::new()),
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_throttle(mut self, throttle: Throttle) -> Self {
        self.throttle = throttle;
        self
    }

    pub fn with_cache(mut self, cache: Arc<dyn ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Attempts that reached the backend (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Snapshot of the call log, sorted so that concurrent runs log identically.
    pub fn call_log(&self) -> Vec<CallRecord> {
        let mut log = self.log.lock().expect("call log poisoned").clone();
        log.sort_by(|a, b| {
            (a.kind, &a.fingerprint, a.cache_hit).cmp(&(b.kind, &b.fingerprint, b.cache_hit))
        });
        log
    }

    pub fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        req.validate()?;
        let fingerprint = req.fingerprint();

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&fingerprint) {
                if hit.fits(req.kind) {
                    self.record(req, &fingerprint, 0, 0, true);
                    return Ok(hit);
                }
                log::warn!("cached response for {fingerprint} does not fit {}", req.kind);
            }
        }

        let mut retries = 0u32;
        loop {
            let started = Instant::now();
            let attempt = {
                let _permit = self.throttle.acquire();
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                self.backend.call(req)
            };
            let elapsed = started.elapsed().as_millis() as u64;

            let (err, hint) = match attempt {
                Ok(mut resp) => {
                    if !resp.fits(req.kind) {
                        return Err(self.failure(retries + 1, format!(
                            "response payload does not match a {} request",
                            req.kind
                        )));
                    }
                    resp.latency_ms = elapsed;
                    if let Some(cache) = &self.cache {
                        cache.put(&fingerprint, &resp);
                    }
                    self.record(req, &fingerprint, elapsed, retries, false);
                    return Ok(resp);
                }
                Err(CallError::TranscriptMiss { fingerprint }) => {
                    return Err(GatewayError::TranscriptMiss {
                        kind: req.kind,
                        fingerprint,
                    })
                }
                Err(CallError::Permanent(message)) => return Err(self.failure(retries + 1, message)),
                Err(e @ CallError::RateLimited { retry_after }) => (e, retry_after),
                Err(e @ CallError::Transient(_)) => (e, None),
            };

            if retries >= self.retry.max_retries {
                self.record(req, &fingerprint, elapsed, retries, false);
                return Err(match err {
                    CallError::RateLimited { .. } => GatewayError::RateLimited {
                        backend: self.backend.id(),
                        attempts: retries + 1,
                    },
                    CallError::Transient(message) => self.failure(retries + 1, message),
                    _ => unreachable!("only retryable errors reach here"),
                });
            }
            let wait = self.retry.delay(retries, hint);
            log::debug!(
                "{} attempt {} on {} failed ({err:?}); retrying in {wait:?}",
                req.kind,
                retries + 1,
                self.backend.id()
            );
            std::thread::sleep(wait);
            retries += 1;
        }
    }

    fn failure(&self, attempts: u32, message: String) -> GatewayError {
        GatewayError::BackendFailure {
            backend: self.backend.id(),
            attempts,
            message,
        }
    }

    fn record(&self, req: &ModelRequest, fingerprint: &str, latency_ms: u64, retries: u32, cache_hit: bool) {
        self.log.lock().expect("call log poisoned").push(CallRecord {
            fingerprint: fingerprint.to_owned(),
            kind: req.kind,
            model_id: req.model_id.clone(),
            latency_ms,
            retries,
            cache_hit,
        });
    }
}
