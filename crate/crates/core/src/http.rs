//! Blocking JSON-over-HTTP with bounded exponential backoff, shared by the
//! remote generation and translation clients.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(300),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1 << retry.min(16))
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

/// Joins a base URL and an endpoint path with exactly one slash.
pub fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// POSTs `body` and decodes the JSON response. Connection failures, 429 and
/// 5xx responses are retried; other non-success statuses fail at once.
pub fn post_json<B: Serialize, T: DeserializeOwned>(url: &str, body: &B, policy: &RetryPolicy) -> Result<T> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(policy.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = try_once(&agent, url, body);
        let message = match outcome {
            Ok(value) => {
                return serde_json::from_value(value).map_err(|e| Error::Transport {
                    attempts,
                    message: format!("malformed response from {url}: {e}"),
                    untranslated: Vec::new(),
                })
            }
            Err(Attempt::Fatal(message)) => {
                return Err(Error::Transport {
                    attempts,
                    message,
                    untranslated: Vec::new(),
                })
            }
            Err(Attempt::Retryable(message)) => message,
        };
        if attempts > policy.retries {
            return Err(Error::Transport {
                attempts,
                message,
                untranslated: Vec::new(),
            });
        }
        log::warn!("request to {url} failed ({message}); retrying");
        thread::sleep(policy.delay(attempts - 1));
    }
}

fn try_once<B: Serialize>(agent: &ureq::Agent, url: &str, body: &B) -> std::result::Result<Value, Attempt> {
    let mut resp = agent
        .post(url)
        .send_json(body)
        .map_err(|e| Attempt::Retryable(format!("{url}: {e}")))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Attempt::Retryable(format!("{url}: reading body: {e}")))?;
    if (200..300).contains(&status) {
        return serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("{url}: invalid JSON: {e}")));
    }
    let detail = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v.get("error").and_then(Value::as_str).map(String::from))
        .unwrap_or(text);
    let message = format!("{url}: HTTP {status}: {detail}");
    if status == 429 || status >= 500 {
        Err(Attempt::Retryable(message))
    } else {
        Err(Attempt::Fatal(message))
    }
}
