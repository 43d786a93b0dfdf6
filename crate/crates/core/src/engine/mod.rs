//! The curation engine: turns a task spec plus an entity set into one
//! structured result per entity.
//!
//! Entities are independent jobs. Each one renders its prompt, calls the
//! provider through a shared rate limiter, validates the reply against
//! the output schema, and retries per [`retry::retry_policy`]. Results
//! and failures are checkpointed to disk as they land, so a run can be
//! killed and resumed without repeating finished work.

pub mod checkpoint;
pub mod limiter;
pub mod parse;
pub mod retry;

use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

pub use checkpoint::{
    config_hash, read_telemetry, CheckpointError, FailedRecord, Manifest, RunDir,
    RunState, TelemetryLine, TelemetrySink,
};
pub use limiter::RateLimiter;
pub use parse::{parse_structured_output, AttrStatus, AttributeResult, ParseError};
pub use retry::{
    apply_corrective, backoff_ceiling, corrective_suffix, retry_policy, AttemptError,
    RetryAction, BACKOFF_BASE, BACKOFF_CAP,
};

use crate::provider::{CurationRequest, Provider, Usage};
use crate::task::{render_prompt, EntityRecord, EntitySet, TaskError, TaskSpec};

/// Global cap on transport-level retries (rate limits, 5xx, timeouts)
/// for one entity, independent of the content attempt budget.
pub const TRANSPORT_MAX_TRIES: u32 = 8;

/// Who produced the values in a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Human,
}

/// Curated output for one entity.
///
/// `finished_at` is runtime-only: it never reaches disk, keeping result
/// files byte-identical across reruns of the same requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityResult {
    pub entity_id: String,
    pub attribute_results: Vec<AttributeResult>,
    pub usage: Usage,
    pub attempts: u32,
    pub provenance: Provenance,
    #[serde(skip)]
    pub finished_at: Option<DateTime<Utc>>,
}

/// Terminal failure for one entity, with whatever usage it burned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityFailure {
    pub entity_id: String,
    pub attempts: u32,
    pub usage: Usage,
    pub error: String,
}

impl From<EntityFailure> for FailedRecord {
    fn from(f: EntityFailure) -> Self {
        FailedRecord {
            entity_id: f.entity_id,
            error: f.error,
            attempts: f.attempts,
            usage: f.usage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub done: usize,
    pub failed: usize,
    pub total_usage: Usage,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("curation job crashed: {0}")]
    Worker(String),
}

/// Assemble the provider request for one entity.
pub fn build_request(
    spec: &TaskSpec,
    record: &EntityRecord,
) -> Result<CurationRequest, TaskError> {
    let bundle = render_prompt(spec, record)?;
    Ok(CurationRequest {
        model_id: spec.model.model_id.clone(),
        system: bundle.system,
        user: bundle.user,
        output_schema: Some(bundle.output_schema),
        search_enabled: spec.model.search_enabled,
        max_output_tokens: spec.model.max_output_tokens,
    })
}

/// Curate a single entity: call, validate, retry, give up.
///
/// Two budgets apply. Replies that arrive but fail validation consume
/// the `max_attempts` content budget and trigger a corrective reissue;
/// transport failures (rate limits, server errors, timeouts) back off
/// and retry on their own counter, capped at [`TRANSPORT_MAX_TRIES`].
/// Auth failures and fixture misses fail immediately.
pub async fn curate_entity(
    spec: &TaskSpec,
    record: &EntityRecord,
    provider: &dyn Provider,
    limiter: Option<&RateLimiter>,
    telemetry: Option<&TelemetrySink>,
) -> Result<EntityResult, EntityFailure> {
    let fail = |attempts: u32, usage: Usage, error: String| EntityFailure {
        entity_id: record.entity_id.clone(),
        attempts,
        usage,
        error,
    };

    let mut request = match build_request(spec, record) {
        Ok(r) => r,
        Err(e) => return Err(fail(0, Usage::default(), e.to_string())),
    };
    let max_attempts = spec.execution.max_attempts;
    let mut attempts = 0u32;
    let mut transport_tries = 0u32;
    let mut usage = Usage::default();

    loop {
        if let Some(l) = limiter {
            l.acquire().await;
        }
        match provider.complete(&request).await {
            Ok(response) => {
                attempts += 1;
                usage += response.usage;
                if let Some(t) = telemetry {
                    let line = TelemetryLine {
                        entity_id: record.entity_id.clone(),
                        attempt: attempts,
                        model_id: response.model_id.clone(),
                        usage: response.usage,
                    };
                    if let Err(e) = t.log(&line) {
                        return Err(fail(attempts, usage, e.to_string()));
                    }
                }
                match parse_structured_output(&response.raw_text, spec) {
                    Ok(attribute_results) => {
                        return Ok(EntityResult {
                            entity_id: record.entity_id.clone(),
                            attribute_results,
                            usage,
                            attempts,
                            provenance: Provenance::Model,
                            finished_at: Some(Utc::now()),
                        });
                    }
                    Err(parse_err) => {
                        let err = AttemptError::Parse(parse_err);
                        if attempts >= max_attempts {
                            return Err(fail(
                                attempts,
                                usage,
                                format!("exhausted {max_attempts} content attempts: {err}"),
                            ));
                        }
                        request = apply_corrective(&request, &err);
                    }
                }
            }
            Err(provider_err) => {
                let err = AttemptError::Provider(provider_err);
                match retry_policy(&err, transport_tries + 1, rand::random::<f64>()) {
                    RetryAction::Fail => {
                        return Err(fail(attempts, usage, err.to_string()));
                    }
                    RetryAction::RetryCorrective => {
                        attempts += 1;
                        if attempts >= max_attempts {
                            return Err(fail(
                                attempts,
                                usage,
                                format!("exhausted {max_attempts} content attempts: {err}"),
                            ));
                        }
                        request = apply_corrective(&request, &err);
                    }
                    RetryAction::RetryAfter(delay) => {
                        transport_tries += 1;
                        if transport_tries >= TRANSPORT_MAX_TRIES {
                            return Err(fail(attempts, usage, err.to_string()));
                        }
                        tokio::time::sleep(delay).await;
                    }
                }
            }
        }
    }
}

/// Run (or resume) a whole task against `entities`, checkpointing into
/// `run_dir`.
///
/// Entities already done or failed on disk are skipped; the rest run
/// concurrently under `max_parallel` and the shared requests-per-minute
/// limiter. Per-entity failures are recorded and do not stop the run.
pub async fn run_task(
    spec: &TaskSpec,
    entities: &EntitySet,
    provider: Arc<dyn Provider>,
    run_dir: &std::path::Path,
) -> Result<RunSummary, RunError> {
    let started = std::time::Instant::now();
    let dir = Arc::new(RunDir::new(run_dir));
    dir.init_or_resume(spec, entities, Utc::now())?;
    let state = dir.scan(entities)?;

    let sink = Arc::new(TelemetrySink::append_to(dir.telemetry_path())?);
    let rate = Arc::new(RateLimiter::new(spec.execution.requests_per_minute));
    let slots = Arc::new(Semaphore::new(spec.execution.max_parallel as usize));
    let spec = Arc::new(spec.clone());

    let mut jobs: JoinSet<Result<(), CheckpointError>> = JoinSet::new();
    for entity_id in &state.pending {
        let record = entities
            .get(entity_id)
            .expect("pending ids come from the entity set")
            .clone();
        let (spec, dir, sink, rate, slots, provider) = (
            Arc::clone(&spec),
            Arc::clone(&dir),
            Arc::clone(&sink),
            Arc::clone(&rate),
            Arc::clone(&slots),
            Arc::clone(&provider),
        );
        jobs.spawn(async move {
            let _slot = slots.acquire_owned().await.expect("semaphore stays open");
            match curate_entity(&spec, &record, provider.as_ref(), Some(&rate), Some(&sink))
                .await
            {
                Ok(result) => dir.write_result(&result),
                Err(failure) => dir.write_failed(&failure.into()),
            }
        });
    }
    while let Some(joined) = jobs.join_next().await {
        joined.map_err(|e| RunError::Worker(e.to_string()))??;
    }

    let final_state = dir.scan(entities)?;
    let total_usage = read_telemetry(&dir.telemetry_path())?
        .iter()
        .map(|l| l.usage)
        .sum();
    Ok(RunSummary {
        done: final_state.done.len(),
        failed: final_state.failed.len(),
        total_usage,
        wall_time: started.elapsed(),
    })
}
