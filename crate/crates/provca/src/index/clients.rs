//! Captioner and embedder service contracts plus their HTTP implementations.
//!
//! Captioner wire contract: `POST {image: <base64>, prompt: <text>}` returns
//! `{caption: <text>}`. Embedder wire contract: `POST {model: <id>,
//! input: [<texts>]}` returns `{data: [{embedding: [<floats>]}]}`.

use std::time::Duration;

use serde_json::json;

use super::IndexError;
use crate::model::ImageHandle;
use crate::net::{post_json, RetryPolicy};

/// Captions one frame image. Implementations must be deterministic enough to
/// cache: the same (model, image, prompt) key must mean the same caption.
pub trait CaptionerClient: Send + Sync {
    /// Model identifier, part of every cache key.
    fn id(&self) -> &str;
    fn caption(&self, image: &ImageHandle, prompt: &str) -> Result<String, IndexError>;
}

/// Embeds caption texts into fixed-dimension vectors.
pub trait EmbedderClient: Send + Sync {
    fn id(&self) -> &str;
    /// Output dimension every returned vector must have.
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, IndexError>;
}

pub struct HttpCaptioner {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpCaptioner {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        Self { endpoint: endpoint.into(), model: model.into(), api_key, retry, http }
    }
}

impl CaptionerClient for HttpCaptioner {
    fn id(&self) -> &str {
        &self.model
    }

    fn caption(&self, image: &ImageHandle, prompt: &str) -> Result<String, IndexError> {
        use base64::Engine;
        let bytes = image.read_bytes().map_err(|e| IndexError::Image(e.to_string()))?;
        let body = json!({
            "image": base64::engine::general_purpose::STANDARD.encode(bytes),
            "prompt": prompt,
        });
        let raw = self
            .retry
            .run(|| post_json(&self.http, &self.endpoint, self.api_key.as_deref(), &body))?;
        let parsed: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| IndexError::BadResponse(e.to_string()))?;
        parsed
            .get("caption")
            .and_then(|c| c.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| IndexError::BadResponse("response missing `caption` field".into()))
    }
}

pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    dimension: usize,
    pub retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dimension: usize,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        Self { endpoint: endpoint.into(), model: model.into(), api_key, dimension, retry, http }
    }
}

impl EmbedderClient for HttpEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, IndexError> {
        let body = json!({ "model": self.model, "input": texts });
        let raw = self
            .retry
            .run(|| post_json(&self.http, &self.endpoint, self.api_key.as_deref(), &body))?;
        let parsed: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| IndexError::BadResponse(e.to_string()))?;
        let data = parsed
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| IndexError::BadResponse("response missing `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(IndexError::BadResponse(format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        data.iter()
            .map(|item| {
                let vector: Vec<f64> = item
                    .get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| IndexError::BadResponse("item missing `embedding`".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| IndexError::BadResponse("non-numeric embedding".into())))
                    .collect::<Result<_, _>>()?;
                if vector.len() != self.dimension {
                    return Err(IndexError::DimensionMismatch {
                        expected: self.dimension,
                        got: vector.len(),
                    });
                }
                Ok(vector)
            })
            .collect()
    }
}
