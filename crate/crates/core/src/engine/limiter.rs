//! Request-rate limiting.
//!
//! Issuance-time sliding window: a request may be issued at time t only
//! if fewer than `rpm` requests were issued in [t - 60s, t). That form
//! of the bound holds over every 60-second window, not just aligned
//! ones, which is what the engine's rate contract promises. Waiters park
//! on the oldest issuance in the window and re-check on wake, so the
//! limiter is safe under arbitrary concurrency.

use std::collections::VecDeque;
use std::time::Duration;

use tokio::time::Instant;

pub const WINDOW: Duration = Duration::from_secs(60);

pub struct RateLimiter {
    rpm: usize,
    issued: tokio::sync::Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32) -> Self {
        RateLimiter {
            rpm: requests_per_minute.max(1) as usize,
            issued: tokio::sync::Mutex::new(VecDeque::new()),
        }
    }

    /// Wait until a request may be issued, then count it as issued now.
    /// Returns the issuance instant.
    pub async fn acquire(&self) -> Instant {
        loop {
            let wake_at = {
                let mut issued = self.issued.lock().await;
                let now = Instant::now();
                while issued.front().is_some_and(|&t| now.duration_since(t) >= WINDOW) {
                    issued.pop_front();
                }
                if issued.len() < self.rpm {
                    issued.push_back(now);
                    return now;
                }
                *issued.front().expect("window is full") + WINDOW
            };
            tokio::time::sleep_until(wake_at).await;
        }
    }
}
