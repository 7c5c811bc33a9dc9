//! Blocking JSON-over-HTTP helpers shared by the remote providers.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, the first one included.
    pub attempts: u32,
    /// Delay before the second attempt; doubles afterwards.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` until it succeeds, fails non-transiently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.attempts.max(1) => {
                    log::debug!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client configuration is static")
}

/// POSTs `body` as JSON and decodes a JSON response.
///
/// Connection failures, timeouts, 429 and 5xx are transient; other non-2xx
/// statuses are fatal.
pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, ProviderError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = bearer {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() || e.is_connect() || e.is_request() {
            ProviderError::Transient(format!("{url}: {e}"))
        } else {
            ProviderError::Fatal(format!("{url}: {e}"))
        }
    })?;
    let status = resp.status();
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(ProviderError::Transient(format!("{url}: HTTP {status}")));
    }
    if !status.is_success() {
        let text = resp.text().unwrap_or_default();
        return Err(ProviderError::Fatal(format!("{url}: HTTP {status}: {text}")));
    }
    let bytes = resp
        .bytes()
        .map_err(|e| ProviderError::Transient(format!("{url}: reading body: {e}")))?;
    serde_json::from_slice(&bytes).map_err(|e| ProviderError::Malformed(format!("{url}: {e}")))
}
