use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};

/// What to do after observing a response (or a transport failure).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrottleDecision {
    /// Hand the response to the caller.
    Proceed,
    /// Sleep for the given (always positive) duration, then retry.
    Wait(Duration),
    /// Retry budget exhausted.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThrottlePolicy {
    /// Number of retries allowed per request; attempt `retry_budget` aborts.
    pub retry_budget: u32,
    pub max_backoff_secs: u64,
    /// Added on top of the rate-limit reset instant.
    pub reset_margin_secs: i64,
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        ThrottlePolicy {
            retry_budget: 5,
            max_backoff_secs: 60,
            reset_margin_secs: 1,
        }
    }
}

pub(crate) fn header<'a>(headers: &'a BTreeMap<String, String>, name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.trim())
}

fn header_num<T: std::str::FromStr>(headers: &BTreeMap<String, String>, name: &str) -> Option<T> {
    header(headers, name).and_then(|v| v.parse().ok())
}

/// True when the response reports an exhausted primary rate-limit budget.
pub(crate) fn is_rate_limited(status: u16, headers: &BTreeMap<String, String>) -> bool {
    matches!(status, 403 | 429) && header_num::<u64>(headers, "x-ratelimit-remaining") == Some(0)
}

impl ThrottlePolicy {
    pub fn plan(
        &self,
        status: u16,
        headers: &BTreeMap<String, String>,
        attempt: u32,
        now: DateTime<Utc>,
    ) -> ThrottleDecision {
        if (200..300).contains(&status) || status == 304 {
            return ThrottleDecision::Proceed;
        }

        let wait_secs = if is_rate_limited(status, headers) {
            match header_num::<i64>(headers, "x-ratelimit-reset") {
                Some(reset) => Some(reset - now.timestamp() + self.reset_margin_secs),
                None => Some(self.backoff_secs(attempt)),
            }
        } else if matches!(status, 403 | 429) {
            match header_num::<i64>(headers, "retry-after") {
                Some(secs) => Some(secs),
                None if status == 429 => Some(self.backoff_secs(attempt)),
                // Plain 403 without throttling headers is a permission problem.
                None => None,
            }
        } else if (500..600).contains(&status) {
            Some(self.backoff_secs(attempt))
        } else {
            None
        };

        match wait_secs {
            None => ThrottleDecision::Proceed,
            Some(_) if attempt >= self.retry_budget => ThrottleDecision::Abort,
            Some(secs) => ThrottleDecision::Wait(Duration::from_secs(secs.max(1) as u64)),
        }
    }

    /// Decision after a connection-level failure (no status available).
    pub fn plan_transport_failure(&self, attempt: u32) -> ThrottleDecision {
        if attempt >= self.retry_budget {
            ThrottleDecision::Abort
        } else {
            ThrottleDecision::Wait(Duration::from_secs(self.backoff_secs(attempt) as u64))
        }
    }

    fn backoff_secs(&self, attempt: u32) -> i64 {
        let exp = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        exp.min(self.max_backoff_secs).max(1) as i64
    }
}

/// [`ThrottlePolicy::plan`] with the default policy.
pub fn plan_throttle(
    status: u16,
    rate_headers: &BTreeMap<String, String>,
    attempt: u32,
    now: DateTime<Utc>,
) -> ThrottleDecision {
    ThrottlePolicy::default().plan(status, rate_headers, attempt, now)
}

/// Source of time for the fetcher. Tests inject a manual clock so waits are
/// computed but not actually slept.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}
