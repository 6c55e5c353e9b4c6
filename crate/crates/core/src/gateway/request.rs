use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::GatewayError;

/// The four model capabilities the pipeline needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestKind {
    Describe,
    Classify,
    EmbedText,
    EmbedImage,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Describe => "describe",
            RequestKind::Classify => "classify",
            RequestKind::EmbedText => "embed-text",
            RequestKind::EmbedImage => "embed-image",
        }
    }

    pub fn needs_image(self) -> bool {
        matches!(self, RequestKind::Describe | RequestKind::EmbedImage)
    }

    pub fn returns_vector(self) -> bool {
        matches!(self, RequestKind::EmbedText | RequestKind::EmbedImage)
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Encoded image bytes plus their media type (e.g. `image/png`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImagePayload {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl ImagePayload {
    pub fn png(bytes: Vec<u8>) -> Self {
        Self {
            media_type: "image/png".into(),
            bytes,
        }
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelRequest {
    pub kind: RequestKind,
    pub prompt: String,
    pub image: Option<ImagePayload>,
    pub model_id: String,
    pub decoding: Decoding,
}

impl ModelRequest {
    pub fn new(kind: RequestKind, model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            kind,
            prompt: prompt.into(),
            image: None,
            model_id: model_id.into(),
            decoding: Decoding::default(),
        }
    }

    pub fn with_image(mut self, image: ImagePayload) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    /// Checks the kind/image pairing and decoding bounds.
    pub fn validate(&self) -> Result<(), GatewayError> {
        match (self.kind.needs_image(), self.image.is_some()) {
            (true, false) => {
                return Err(GatewayError::InvalidRequest(format!(
                    "{} request requires an image",
                    self.kind
                )))
            }
            (false, true) => {
                return Err(GatewayError::InvalidRequest(format!(
                    "{} request must not carry an image",
                    self.kind
                )))
            }
            _ => {}
        }
        if !(self.decoding.temperature >= 0.0 && self.decoding.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.decoding.temperature
            )));
        }
        if self.decoding.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stable digest over kind, prompt, model id, decoding and image bytes.
    ///
    /// The request is rendered as JSON with sorted keys before hashing, so the
    /// digest depends on values only.
    pub fn fingerprint(&self) -> String {
        let mut decoding = BTreeMap::new();
        decoding.insert("max_output_tokens", Value::from(self.decoding.max_output_tokens));
        // adding 0.0 folds -0.0 into 0.0
        decoding.insert("temperature", Value::from(self.decoding.temperature + 0.0));

        let image = self.image.as_ref().map(|img| {
            let mut m = BTreeMap::new();
            m.insert("media_type", Value::from(img.media_type.clone()));
            m.insert("sha256", Value::from(img.sha256()));
            m
        });

        let mut doc = BTreeMap::new();
        doc.insert("decoding", serde_json::to_value(decoding).expect("map of values"));
        doc.insert("image", serde_json::to_value(image).expect("map of values"));
        doc.insert("kind", Value::from(self.kind.as_str()));
        doc.insert("model_id", Value::from(self.model_id.clone()));
        doc.insert("prompt", Value::from(self.prompt.clone()));
        let canonical = serde_json::to_vec(&doc).expect("map of values");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

/// What a backend returned: text for describe/classify, a vector for embeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default)]
    pub usage: Usage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }

    pub fn vector(vector: Vec<f64>) -> Self {
        Self {
            vector: Some(vector),
            ..Self::default()
        }
    }

    /// True when exactly one payload is present and it suits `kind`.
    pub fn fits(&self, kind: RequestKind) -> bool {
        if kind.returns_vector() {
            self.vector.is_some() && self.text.is_none()
        } else {
            self.text.is_some() && self.vector.is_none()
        }
    }

    /// Digest of the payload, excluding latency.
    pub fn digest(&self) -> String {
        let mut doc = BTreeMap::new();
        doc.insert("text", serde_json::to_value(&self.text).expect("plain value"));
        doc.insert("vector", serde_json::to_value(&self.vector).expect("plain value"));
        doc.insert("usage", serde_json::to_value(self.usage).expect("plain value"));
        hex::encode(Sha256::digest(serde_json::to_vec(&doc).expect("plain value")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn describe() -> ModelRequest {
        ModelRequest::new(RequestKind::Describe, "kosmos", "This is a satellite image.")
            .with_image(ImagePayload::png(vec![1, 2, 3, 4]))
    }

    #[test]
    fn identical_requests_share_a_fingerprint() {
        assert_eq!(describe().fingerprint(), describe().fingerprint());
    }

    #[test]
    fn temperature_changes_fingerprint() {
        let mut warmer = describe();
        warmer.decoding.temperature = 0.7;
        assert_ne!(describe().fingerprint(), warmer.fingerprint());
    }

    #[test]
    fn one_image_byte_changes_fingerprint() {
        let mut flipped = describe();
        flipped.image.as_mut().unwrap().bytes[2] ^= 0x01;
        assert_ne!(describe().fingerprint(), flipped.fingerprint());
    }

    #[test]
    fn negative_zero_temperature_is_canonical() {
        let mut neg = describe();
        neg.decoding.temperature = -0.0;
        assert_eq!(describe().fingerprint(), neg.fingerprint());
    }

    #[test]
    fn fingerprint_is_pinned() {
        // sha256 of {"decoding":{"max_output_tokens":512,"temperature":0.0},"image":null,
        // "kind":"classify","model_id":"m","prompt":"p"}, computed outside Rust
        let req = ModelRequest::new(RequestKind::Classify, "m", "p");
        assert_eq!(
            req.fingerprint(),
            "5f387b1b12a7e7f60484fa922362b5108a12591e93b51ff4b362add99a260918"
        );
    }

    #[test]
    fn image_rules_are_enforced() {
        let bad = ModelRequest::new(RequestKind::Classify, "m", "p")
            .with_image(ImagePayload::png(vec![0]));
        assert!(matches!(bad.validate(), Err(GatewayError::InvalidRequest(_))));
        let missing = ModelRequest::new(RequestKind::EmbedImage, "m", "");
        assert!(missing.validate().is_err());
        assert!(describe().validate().is_ok());
    }

    #[test]
    fn response_kind_fit() {
        assert!(ModelResponse::text("x").fits(RequestKind::Classify));
        assert!(!ModelResponse::text("x").fits(RequestKind::EmbedText));
        assert!(ModelResponse::vector(vec![1.0]).fits(RequestKind::EmbedImage));
    }
}
