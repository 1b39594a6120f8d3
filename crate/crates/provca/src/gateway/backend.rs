//! HTTP chat backend speaking the de-facto chat-completions wire contract.

use std::time::Duration;

use super::{ChatRequest, GatewayError, MllmBackend};
use crate::net::{post_json, RetryPolicy};

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-08-06";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PROVCA_API_KEY";
/// Environment variable overriding the API base URL.
pub const API_BASE_ENV: &str = "PROVCA_API_BASE";

pub struct HttpBackend {
    model: String,
    endpoint: String,
    api_key: Option<String>,
    max_images: usize,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        api_base: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        max_images: usize,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        let base = api_base.into();
        let endpoint = format!("{}/chat/completions", base.trim_end_matches('/'));
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        Self { model: model.into(), endpoint, api_key, max_images, retry, http }
    }

    /// Backend from `PROVCA_API_BASE` / `PROVCA_API_KEY`, with defaults.
    pub fn from_env(model: Option<String>) -> Self {
        let base = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        let key = std::env::var(API_KEY_ENV).ok();
        Self::new(
            base,
            model.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            key,
            32,
            Duration::from_secs(120),
            RetryPolicy::default(),
        )
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl MllmBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn max_images(&self) -> usize {
        self.max_images
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = serde_json::to_value(request).expect("chat request serializes");
        let raw = self
            .retry
            .run(|| post_json(&self.http, &self.endpoint, self.api_key.as_deref(), &body))?;
        let parsed: serde_json::Value = serde_json::from_slice(&raw)
            .map_err(|e| GatewayError::BadResponse(format!("non-JSON response: {e}")))?;
        parsed
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                GatewayError::BadResponse("response missing choices[0].message.content".into())
            })
    }
}
