//! Live HTTP provider.
//!
//! Speaks a generic "instructions + input + optional search tool +
//! optional JSON-schema output" shape against `{base_url}/responses`.
//! The payload builder and reply parser are plain functions so the wire
//! format is testable without a network.

use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{
    to_json_schema, CurationRequest, Provider, ProviderError, ProviderResponse, Usage,
};

pub const API_KEY_ENV: &str = "DP_API_KEY";
pub const BASE_URL_ENV: &str = "DP_API_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(180);

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub api_key: String,
    pub base_url: String,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(api_key: impl Into<String>, base_url: impl Into<String>) -> Self {
        LiveConfig {
            api_key: api_key.into(),
            base_url: base_url.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Read `DP_API_KEY` (required) and `DP_API_BASE_URL` (optional).
    pub fn from_env() -> Result<Self, ProviderError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| ProviderError::AuthFailure(format!("{API_KEY_ENV} is not set")))?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(LiveConfig::new(api_key, base_url))
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::Client,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        LiveProvider { config, client: reqwest::Client::new() }
    }

    fn endpoint(&self) -> String {
        format!("{}/responses", self.config.base_url.trim_end_matches('/'))
    }
}

/// Render the outgoing JSON payload. Declares the search tool only when
/// the request enables it, and a schema-constrained output format only
/// when a schema is present.
pub fn build_request_body(request: &CurationRequest) -> Value {
    let mut body = json!({
        "model": request.model_id,
        "instructions": request.system,
        "input": request.user,
        "max_output_tokens": request.max_output_tokens,
    });
    if request.search_enabled {
        body["tools"] = json!([{ "type": "web_search" }]);
    }
    if let Some(schema) = &request.output_schema {
        body["text"] = json!({
            "format": {
                "type": "json_schema",
                "name": schema.title,
                "schema": to_json_schema(schema),
            }
        });
    }
    body
}

fn snippet(text: &str) -> String {
    let trimmed = text.trim();
    if trimmed.len() <= 200 {
        trimmed.to_string()
    } else {
        let mut end = 200;
        while !trimmed.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &trimmed[..end])
    }
}

/// Interpret a 2xx reply body: collect the output text, the reported
/// token usage, and the number of search tool invocations.
pub fn parse_response_body(
    body: &Value,
    request: &CurationRequest,
) -> Result<ProviderResponse, ProviderError> {
    let output = body["output"].as_array().ok_or_else(|| {
        ProviderError::MalformedReply("reply has no output array".to_string())
    })?;

    let mut raw_text = String::new();
    let mut search_calls = 0u64;
    for item in output {
        match item["type"].as_str() {
            Some("web_search_call") => search_calls += 1,
            Some("message") => {
                for part in item["content"].as_array().into_iter().flatten() {
                    if part["type"].as_str() == Some("output_text") {
                        raw_text.push_str(part["text"].as_str().unwrap_or_default());
                    }
                }
            }
            _ => {}
        }
    }
    if raw_text.is_empty() {
        return Err(ProviderError::MalformedReply(
            "reply contains no output text".to_string(),
        ));
    }

    let usage_value = body.get("usage").ok_or_else(|| {
        ProviderError::MalformedReply("reply reports no usage".to_string())
    })?;
    let mut usage: Usage = serde_json::from_value(usage_value.clone())
        .map_err(|e| ProviderError::MalformedReply(format!("bad usage object: {e}")))?;
    usage.search_calls = search_calls;

    Ok(ProviderResponse {
        raw_text,
        usage,
        model_id: request.model_id.clone(),
    })
}

#[async_trait]
impl Provider for LiveProvider {
    async fn complete(
        &self,
        request: &CurationRequest,
    ) -> Result<ProviderResponse, ProviderError> {
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .timeout(self.config.timeout)
            .json(&build_request_body(request))
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::NetworkTimeout(format!("request timed out: {e}"))
                } else {
                    ProviderError::NetworkTimeout(e.to_string())
                }
            })?;

        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response
            .text()
            .await
            .map_err(|e| ProviderError::NetworkTimeout(e.to_string()))?;

        match status {
            200..=299 => {
                let body: Value = serde_json::from_str(&text).map_err(|e| {
                    ProviderError::MalformedReply(format!("reply is not JSON: {e}"))
                })?;
                parse_response_body(&body, request)
            }
            401 | 403 => Err(ProviderError::AuthFailure(snippet(&text))),
            429 => Err(ProviderError::RateLimited { retry_after }),
            500..=599 => Err(ProviderError::TransientServer {
                status,
                message: snippet(&text),
            }),
            other => Err(ProviderError::MalformedReply(format!(
                "unexpected http {other}: {}",
                snippet(&text)
            ))),
        }
    }
}
