//! In-memory provider for tests: replies come from a queue, requests are
//! recorded for later assertions.

use std::collections::VecDeque;
use std::sync::Mutex;

use async_trait::async_trait;

use super::{CurationRequest, Provider, ProviderError, ProviderResponse, Usage};

enum ScriptedReply {
    Text { raw_text: String, usage: Usage },
    Fail(ProviderError),
}

#[derive(Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<ScriptedReply>>,
    seen: Mutex<Vec<CurationRequest>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_ok(&self, raw_text: impl Into<String>, usage: Usage) {
        self.queue
            .lock()
            .unwrap()
            .push_back(ScriptedReply::Text { raw_text: raw_text.into(), usage });
    }

    pub fn push_err(&self, err: ProviderError) {
        self.queue.lock().unwrap().push_back(ScriptedReply::Fail(err));
    }

    pub fn with_ok(self, raw_text: impl Into<String>, usage: Usage) -> Self {
        self.push_ok(raw_text, usage);
        self
    }

    pub fn with_err(self, err: ProviderError) -> Self {
        self.push_err(err);
        self
    }

    /// Requests seen so far, in arrival order.
    pub fn requests(&self) -> Vec<CurationRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

#[async_trait]
impl Provider for ScriptedProvider {
    async fn complete(
        &self,
        request: &CurationRequest,
    ) -> Result<ProviderResponse, ProviderError> {
        self.seen.lock().unwrap().push(request.clone());
        // An exhausted script maps to the one non-retryable provider
        // error so engine tests fail fast instead of spinning.
        match self.queue.lock().unwrap().pop_front() {
            Some(ScriptedReply::Text { raw_text, usage }) => Ok(ProviderResponse {
                raw_text,
                usage,
                model_id: request.model_id.clone(),
            }),
            Some(ScriptedReply::Fail(err)) => Err(err),
            None => Err(ProviderError::FixtureMiss { key: super::request_key(request) }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> CurationRequest {
        CurationRequest {
            model_id: "m".into(),
            system: "s".into(),
            user: user.into(),
            output_schema: None,
            search_enabled: false,
            max_output_tokens: 64,
        }
    }

    #[tokio::test]
    async fn replies_in_fifo_order() {
        let p = ScriptedProvider::new()
            .with_ok("first", Usage::default())
            .with_ok("second", Usage::default());
        assert_eq!(p.complete(&request("a")).await.unwrap().raw_text, "first");
        assert_eq!(p.complete(&request("b")).await.unwrap().raw_text, "second");
        assert_eq!(p.calls(), 2);
        assert_eq!(p.requests()[1].user, "b");
    }

    #[tokio::test]
    async fn reply_model_id_mirrors_the_request() {
        let p = ScriptedProvider::new().with_ok("x", Usage::default());
        assert_eq!(p.complete(&request("a")).await.unwrap().model_id, "m");
    }

    #[tokio::test]
    async fn exhausted_script_reports_fixture_miss() {
        let p = ScriptedProvider::new();
        let err = p.complete(&request("a")).await.unwrap_err();
        assert!(matches!(err, ProviderError::FixtureMiss { .. }));
    }

    #[tokio::test]
    async fn scripted_errors_surface() {
        let p = ScriptedProvider::new()
            .with_err(ProviderError::AuthFailure("bad key".into()));
        let err = p.complete(&request("a")).await.unwrap_err();
        assert!(matches!(err, ProviderError::AuthFailure(_)));
    }
}
