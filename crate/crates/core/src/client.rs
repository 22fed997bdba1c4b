//! Shared plumbing for external model services: error type, bounded retry
//! with exponential backoff, and a small JSON-over-HTTP transport.
//!
//! Endpoints and credentials come from the environment (`SCORER_URL`,
//! `CAPTIONER_URL`, `REFINER_URL` and the matching `*_API_KEY`).

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("service returned an empty response")]
    EmptyResponse,
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ClientError> },
}

impl ClientError {
    /// Transport failures, 408/429, 5xx and blank answers are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) | ClientError::EmptyResponse => true,
            ClientError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            ClientError::Decode(_) | ClientError::Exhausted { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for tests and offline stubs.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let mut retry = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    log::debug!("retrying after error: {e}");
                    std::thread::sleep(self.delay(retry));
                    retry += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(ClientError::Exhausted {
                        attempts: retry + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Endpoint URL plus optional bearer token.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub url: String,
    pub api_key: Option<String>,
}

impl Endpoint {
    /// Reads `<PREFIX>_URL` and `<PREFIX>_API_KEY`.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let url = std::env::var(format!("{prefix}_URL")).ok().filter(|u| !u.trim().is_empty())?;
        let api_key = std::env::var(format!("{prefix}_API_KEY")).ok().filter(|k| !k.is_empty());
        Some(Self { url, api_key })
    }
}

/// Blocking JSON POST transport shared by the HTTP clients.
pub struct JsonHttp {
    endpoint: Endpoint,
    http: reqwest::blocking::Client,
}

impl JsonHttp {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self { endpoint, http })
    }

    pub fn url(&self) -> &str {
        &self.endpoint.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        let mut req = self.http.post(&self.endpoint.url).json(body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        if text.trim().is_empty() {
            return Err(ClientError::EmptyResponse);
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_then_succeeds() {
        let calls = Cell::new(0);
        let out = RetryPolicy::immediate(3).run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(ClientError::EmptyResponse)
            } else {
                Ok(7)
            }
        });
        assert_eq!(out, Ok(7));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn exhausts_budget() {
        let calls = Cell::new(0);
        let out: Result<(), _> = RetryPolicy::immediate(2).run(|| {
            calls.set(calls.get() + 1);
            Err(ClientError::Status { status: 503, body: String::new() })
        });
        assert!(matches!(out, Err(ClientError::Exhausted { attempts: 3, .. })));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let calls = Cell::new(0);
        let out: Result<(), _> = RetryPolicy::immediate(5).run(|| {
            calls.set(calls.get() + 1);
            Err(ClientError::Status { status: 401, body: "no".into() })
        });
        assert!(matches!(out, Err(ClientError::Status { status: 401, .. })));
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_retries: 9, base_delay_ms: 100, max_delay_ms: 500 };
        let ms: Vec<u128> = (0..5).map(|r| p.delay(r).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 500, 500]);
    }
}
