//! Model provider abstraction.
//!
//! Everything upstream of the engine talks to a [`Provider`]: one async
//! call that turns a [`CurationRequest`] into raw text plus usage counts.
//! Implementations:
//!
//! - [`live::LiveProvider`]: real HTTP backend
//! - [`replay::ReplayProvider`]: serves recorded fixtures, never dials out
//! - [`replay::RecordingProvider`]: wraps another provider and records
//! - [`scripted::ScriptedProvider`]: in-memory queue for tests
//!
//! Requests are content-addressed by [`request_key`], which is what makes
//! record/replay and resumption line up across processes.

pub mod live;
pub mod replay;
pub mod schema;
pub mod scripted;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{LiveConfig, LiveProvider};
pub use replay::{Fixture, RecordingProvider, ReplayProvider};
pub use schema::{to_json_schema, SchemaDoc, SchemaField};
pub use scripted::ScriptedProvider;

/// Billable counts reported by the provider for one call.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize,
)]
pub struct Usage {
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
    #[serde(default)]
    pub search_calls: u64,
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, rhs: Usage) -> Usage {
        Usage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            search_calls: self.search_calls + rhs.search_calls,
        }
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), std::ops::Add::add)
    }
}

/// One fully specified model call. Two requests with equal fields are the
/// same request for caching, replay, and resumption purposes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRequest {
    pub model_id: String,
    pub system: String,
    pub user: String,
    /// `None` sends a plain-text request (used by bootstrapping); `Some`
    /// asks the backend for schema-constrained JSON.
    pub output_schema: Option<SchemaDoc>,
    pub search_enabled: bool,
    pub max_output_tokens: u32,
}

/// Raw provider reply: the text is kept byte-for-byte as received so
/// replayed runs are indistinguishable from recorded ones. `model_id`
/// always equals the request's model_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub raw_text: String,
    pub usage: Usage,
    pub model_id: String,
}

#[derive(Debug, Clone, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited by backend")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {message}")]
    TransientServer { status: u16, message: String },
    #[error("network timeout: {0}")]
    NetworkTimeout(String),
    #[error("malformed provider reply: {0}")]
    MalformedReply(String),
    #[error("no fixture recorded for request {key}")]
    FixtureMiss { key: String },
}

#[async_trait]
pub trait Provider: Send + Sync {
    async fn complete(&self, request: &CurationRequest)
        -> Result<ProviderResponse, ProviderError>;
}

/// Content address of a request: SHA-256 over a canonical JSON encoding
/// (sorted keys, compact separators, schema rendered to its JSON Schema
/// form or `null`).
pub fn request_key(request: &CurationRequest) -> String {
    let schema = request.output_schema.as_ref().map(to_json_schema);
    let canonical = serde_json::json!({
        "model_id": request.model_id,
        "system": request.system,
        "user": request.user,
        "schema": schema,
        "search_enabled": request.search_enabled,
        "max_output_tokens": request.max_output_tokens,
    });
    crate::util::sha256_hex(canonical.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> CurationRequest {
        CurationRequest {
            model_id: "test-model".into(),
            system: "be brief".into(),
            user: "Q".into(),
            output_schema: None,
            search_enabled: true,
            max_output_tokens: 1024,
        }
    }

    #[test]
    fn key_is_sha256_hex() {
        let key = request_key(&request());
        assert_eq!(key.len(), 64);
        assert!(key.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn key_is_stable_across_clones() {
        let a = request();
        let b = a.clone();
        assert_eq!(request_key(&a), request_key(&b));
    }

    #[test]
    fn key_changes_with_every_field() {
        let base = request();
        let variants = [
            CurationRequest { model_id: "other".into(), ..base.clone() },
            CurationRequest { system: "be verbose".into(), ..base.clone() },
            CurationRequest { user: "Q2".into(), ..base.clone() },
            CurationRequest { search_enabled: false, ..base.clone() },
            CurationRequest { max_output_tokens: 2048, ..base.clone() },
            CurationRequest {
                output_schema: Some(SchemaDoc {
                    title: "t".into(),
                    fields: vec![],
                }),
                ..base.clone()
            },
        ];
        let base_key = request_key(&base);
        for v in &variants {
            assert_ne!(request_key(v), base_key, "{v:?}");
        }
    }

    #[test]
    fn usage_sums_componentwise() {
        let a = Usage { input_tokens: 1, output_tokens: 2, search_calls: 3 };
        let b = Usage { input_tokens: 10, output_tokens: 20, search_calls: 30 };
        let total: Usage = [a, b].into_iter().sum();
        assert_eq!(
            total,
            Usage { input_tokens: 11, output_tokens: 22, search_calls: 33 }
        );
    }

    #[test]
    fn usage_tolerates_missing_fields() {
        let u: Usage = serde_json::from_str(r#"{"input_tokens": 5}"#).unwrap();
        assert_eq!(u.input_tokens, 5);
        assert_eq!(u.search_calls, 0);
    }
}
