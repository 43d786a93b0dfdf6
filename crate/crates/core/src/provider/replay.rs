//! Record/replay providers.
//!
//! A fixture is one JSON file per request, named by the request key.
//! Recording wraps a live provider and captures every successful reply;
//! replaying serves the captured bytes back and touches no network, which
//! is what makes the whole pipeline testable offline.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{request_key, CurationRequest, Provider, ProviderError, ProviderResponse};
use crate::util::atomic_write_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub request: CurationRequest,
    pub response: ProviderResponse,
}

pub fn fixture_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

/// Write one fixture under `dir`, creating it if needed. Returns the
/// file path.
pub fn write_fixture(
    dir: &Path,
    request: &CurationRequest,
    response: &ProviderResponse,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let key = request_key(request);
    let path = fixture_path(dir, &key);
    let fixture = Fixture {
        key,
        request: request.clone(),
        response: response.clone(),
    };
    atomic_write_json(&path, &fixture)?;
    Ok(path)
}

/// Serves recorded fixtures from a directory. Never dials out; an
/// unrecorded request is a hard [`ProviderError::FixtureMiss`].
pub struct ReplayProvider {
    dir: PathBuf,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayProvider { dir: dir.into() }
    }
}

#[async_trait]
impl Provider for ReplayProvider {
    async fn complete(
        &self,
        request: &CurationRequest,
    ) -> Result<ProviderResponse, ProviderError> {
        let key = request_key(request);
        let path = fixture_path(&self.dir, &key);
        let bytes = std::fs::read(&path)
            .map_err(|_| ProviderError::FixtureMiss { key: key.clone() })?;
        let fixture: Fixture = serde_json::from_slice(&bytes).map_err(|e| {
            ProviderError::MalformedReply(format!(
                "fixture {} does not parse: {e}",
                path.display()
            ))
        })?;
        if fixture.key != key {
            return Err(ProviderError::MalformedReply(format!(
                "fixture {} was recorded under key {}",
                path.display(),
                fixture.key
            )));
        }
        Ok(fixture.response)
    }
}

/// Wraps another provider and records every successful reply as a
/// fixture. Failures pass through unrecorded.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    dir: PathBuf,
    write_lock: tokio::sync::Mutex<()>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>, dir: impl Into<PathBuf>) -> Self {
        RecordingProvider {
            inner,
            dir: dir.into(),
            write_lock: tokio::sync::Mutex::new(()),
        }
    }
}

#[async_trait]
impl Provider for RecordingProvider {
    async fn complete(
        &self,
        request: &CurationRequest,
    ) -> Result<ProviderResponse, ProviderError> {
        let response = self.inner.complete(request).await?;
        let _guard = self.write_lock.lock().await;
        write_fixture(&self.dir, request, &response).map_err(|e| {
            ProviderError::MalformedReply(format!("failed to record fixture: {e}"))
        })?;
        Ok(response)
    }
}
