//! OpenAI-compatible HTTP backend (`/v1/chat/completions`, `/v1/embeddings`).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, CallError, ModelRequest, ModelResponse, RequestKind, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "GVL_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Server root, e.g. `https://api.openai.com` or `http://localhost:8000`.
    /// A trailing `/v1` is accepted.
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Read from [`API_KEY_ENV`] when not set explicitly.
    #[serde(skip)]
    pub api_key: Option<String>,
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_secs: default_timeout(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    fn endpoint(&self, path: &str) -> String {
        let root = self.base_url.trim_end_matches('/');
        let root = root.strip_suffix("/v1").unwrap_or(root);
        format!("{root}/v1/{path}")
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    fn payload(req: &ModelRequest) -> (String, Value) {
        match req.kind {
            RequestKind::Describe | RequestKind::Classify => {
                let content = match &req.image {
                    Some(image) => json!([
                        { "type": "text", "text": req.prompt },
                        { "type": "image_url", "image_url": { "url": image.data_url() } },
                    ]),
                    None => Value::String(req.prompt.clone()),
                };
                let body = json!({
                    "model": req.model_id,
                    "messages": [{ "role": "user", "content": content }],
                    "temperature": req.decoding.temperature,
                    "max_tokens": req.decoding.max_output_tokens,
                });
                ("chat/completions".into(), body)
            }
            RequestKind::EmbedText => (
                "embeddings".into(),
                json!({ "model": req.model_id, "input": req.prompt }),
            ),
            RequestKind::EmbedImage => {
                let url = req.image.as_ref().map(|i| i.data_url()).unwrap_or_default();
                ("embeddings".into(), json!({ "model": req.model_id, "input": url }))
            }
        }
    }
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Parses a successful body for the given request kind.
pub(crate) fn parse_reply(kind: RequestKind, body: &str) -> Result<ModelResponse, CallError> {
    let bad = |e: serde_json::Error| CallError::Permanent(format!("undecodable reply: {e}"));
    if kind.returns_vector() {
        let reply: EmbeddingReply = serde_json::from_str(body).map_err(bad)?;
        let first = reply
            .data
            .into_iter()
            .next()
            .ok_or_else(|| CallError::Permanent("embedding reply has no data".into()))?;
        Ok(ModelResponse {
            vector: Some(first.embedding),
            usage: reply.usage.unwrap_or_default(),
            ..ModelResponse::default()
        })
    } else {
        let reply: ChatReply = serde_json::from_str(body).map_err(bad)?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(ModelResponse {
            text: Some(text),
            usage: reply.usage.unwrap_or_default(),
            ..ModelResponse::default()
        })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.base_url.trim_end_matches('/'))
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, CallError> {
        let (path, body) = Self::payload(req);
        let mut request = self.agent.post(&self.config.endpoint(&path));
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| CallError::Transient(e.to_string()))?;

        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| CallError::Transient(e.to_string()))?;

        match status {
            200..=299 => parse_reply(req.kind, &text),
            429 => Err(CallError::RateLimited { retry_after }),
            408 | 500..=599 => Err(CallError::Transient(format!("HTTP {status}"))),
            _ => Err(CallError::Permanent(format!(
                "HTTP {status}: {}",
                text.chars().take(300).collect::<String>()
            ))),
        }
    }
}
