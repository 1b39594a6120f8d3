//! Shared HTTP transport plumbing: error classification and the retry policy
//! used by every remote client (captioner, embedder, chat backend).

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("server returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("network failure: {0}")]
    Network(String),
}

impl TransportError {
    /// Only timeouts and 5xx-class failures are retried.
    pub fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout => true,
            TransportError::Status { code, .. } => (500..600).contains(code),
            TransportError::Network(_) => false,
        }
    }
}

/// Bounded retry with exponential backoff: `attempts` tries total, sleeping
/// `base_delay * 2^(attempt-1)` between retryable failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, TransportError> {
        let attempts = self.attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Ok(value) => return Ok(value),
                Err(err) if err.retryable() && attempt < attempts => {
                    std::thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// POST a JSON body, classify failures, and return the raw response bytes.
pub fn post_json(
    http: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
) -> Result<Vec<u8>, TransportError> {
    let mut request = http.post(url).json(body);
    if let Some(token) = bearer {
        request = request.bearer_auth(token);
    }
    let response = request.send().map_err(classify)?;
    let status = response.status();
    let bytes = response.bytes().map_err(classify)?.to_vec();
    if !status.is_success() {
        return Err(TransportError::Status {
            code: status.as_u16(),
            body: String::from_utf8_lossy(&bytes).chars().take(300).collect(),
        });
    }
    Ok(bytes)
}

fn classify(err: reqwest::Error) -> TransportError {
    if err.is_timeout() {
        TransportError::Timeout
    } else {
        TransportError::Network(err.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn retries_on_retryable_until_budget() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) };
        let result: Result<(), _> = policy.run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(TransportError::Timeout)
        });
        assert!(result.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn does_not_retry_non_retryable() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy::default();
        let result: Result<(), _> = policy.run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(TransportError::Status { code: 400, body: "bad".into() })
        });
        assert!(result.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) };
        let result = policy.run(|| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(TransportError::Status { code: 503, body: "busy".into() })
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }
}
