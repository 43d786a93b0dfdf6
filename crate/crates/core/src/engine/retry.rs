//! Retry policy: what to do after a failed attempt.
//!
//! Two error families, two treatments. Transport problems (rate limits,
//! server errors, timeouts) back off exponentially with full jitter,
//! honoring the server's retry-after hint when it gives one. Content
//! problems (a reply that parses wrong) retry immediately with a
//! corrective suffix appended to the user prompt. Auth failures and
//! fixture misses never retry.

use std::time::Duration;

use thiserror::Error;

use super::parse::ParseError;
use crate::provider::{CurationRequest, ProviderError};

pub const BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const BACKOFF_CAP: Duration = Duration::from_secs(60);

/// Anything that can sink one attempt at an entity.
#[derive(Debug, Clone, Error)]
pub enum AttemptError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryAction {
    /// Wait this long, then reissue the request unchanged.
    RetryAfter(Duration),
    /// Reissue immediately with a corrective suffix on the user prompt.
    RetryCorrective,
    /// Not retryable.
    Fail,
}

/// Largest backoff delay allowed before the given 1-based attempt:
/// `min(cap, base * 2^(attempt-1))`.
pub fn backoff_ceiling(attempt: u32) -> Duration {
    let doubled = BACKOFF_BASE.saturating_mul(1u32.checked_shl(attempt - 1).unwrap_or(u32::MAX));
    doubled.min(BACKOFF_CAP)
}

/// Decide the next action. `attempt` counts failures of this error's
/// class so far (≥ 1); `jitter` in [0, 1) scales the backoff ceiling.
/// Total: every input maps to an action.
pub fn retry_policy(error: &AttemptError, attempt: u32, jitter: f64) -> RetryAction {
    match error {
        AttemptError::Provider(ProviderError::AuthFailure(_))
        | AttemptError::Provider(ProviderError::FixtureMiss { .. }) => RetryAction::Fail,
        AttemptError::Provider(ProviderError::RateLimited { retry_after: Some(hint) }) => {
            RetryAction::RetryAfter((*hint).min(BACKOFF_CAP))
        }
        AttemptError::Provider(ProviderError::RateLimited { retry_after: None })
        | AttemptError::Provider(ProviderError::TransientServer { .. })
        | AttemptError::Provider(ProviderError::NetworkTimeout(_)) => {
            RetryAction::RetryAfter(backoff_ceiling(attempt).mul_f64(jitter.clamp(0.0, 1.0)))
        }
        AttemptError::Provider(ProviderError::MalformedReply(_))
        | AttemptError::Parse(_) => RetryAction::RetryCorrective,
    }
}

/// The fixed corrective text, citing the violation. Deterministic so
/// retried requests have stable request keys under replay.
pub fn corrective_suffix(error: &AttemptError) -> String {
    format!(
        "\n\nYour previous reply was rejected: {error}. \
         Reply again with exactly one JSON object that matches the output schema: \
         one entry per listed attribute, each with a \"status\" of \"found\" or \
         \"not_found\", and a \"value\" present exactly when the status is \"found\"."
    )
}

/// Append the corrective suffix for `error` to a request's user prompt.
pub fn apply_corrective(request: &CurationRequest, error: &AttemptError) -> CurationRequest {
    let mut next = request.clone();
    next.user.push_str(&corrective_suffix(error));
    next
}
