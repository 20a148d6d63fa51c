//! Minimal HTTP plumbing: a transport trait, the live client, request
//! hashing with secret redaction, and retry with exponential backoff.

use std::io::Read;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{CorpusError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    /// Sent but never hashed or recorded (they carry credentials).
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        HttpRequest {
            method: "GET".into(),
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post_json(url: impl Into<String>, body: String) -> Self {
        HttpRequest {
            method: "POST".into(),
            url: url.into(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse>;

    /// True when no network I/O can happen (fixture replay).
    fn is_offline(&self) -> bool {
        false
    }
}

/// Query parameters whose values are secrets.
const SECRET_PARAMS: [&str; 5] = ["api-key", "api_key", "apikey", "key", "token"];

/// The URL with secret query values replaced by `REDACTED`.
pub fn redact_url(url: &str) -> String {
    let Ok(mut parsed) = url::Url::parse(url) else {
        return url.to_string();
    };
    if parsed.query().is_none() {
        return url.to_string();
    }
    let pairs: Vec<(String, String)> = parsed
        .query_pairs()
        .map(|(k, v)| {
            let secret = SECRET_PARAMS.iter().any(|s| k.eq_ignore_ascii_case(s));
            (k.into_owned(), if secret { "REDACTED".into() } else { v.into_owned() })
        })
        .collect();
    parsed.query_pairs_mut().clear().extend_pairs(pairs);
    parsed.to_string()
}

/// Stable fixture key: SHA-256 over method, redacted URL and body.
pub fn request_key(req: &HttpRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.method.as_bytes());
    h.update(b" ");
    h.update(redact_url(&req.url).as_bytes());
    h.update(b"\n");
    if let Some(b) = &req.body {
        h.update(b.as_bytes());
    }
    hex::encode(h.finalize())
}

pub struct LiveTransport {
    agent: ureq::Agent,
}

impl LiveTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LiveTransport { agent }
    }
}

impl Transport for LiveTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse> {
        let result = match req.method.as_str() {
            "GET" => {
                let mut r = self.agent.get(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k, v);
                }
                r.call()
            }
            "POST" => {
                let mut r = self.agent.post(&req.url);
                for (k, v) in &req.headers {
                    r = r.header(k, v);
                }
                r.send(req.body.clone().unwrap_or_default())
            }
            m => return Err(CorpusError::Transport(format!("unsupported method {m}"))),
        };
        let redacted = redact_url(&req.url);
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => CorpusError::Timeout { url: redacted.clone() },
            other => CorpusError::Transport(format!("{redacted}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let mut body = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| CorpusError::Transport(format!("{redacted}: reading body: {e}")))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_secs(2),
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry `n` (0-based): `base · 2ⁿ`, capped.
    pub fn delay(&self, n: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << n.min(20)).min(self.max_delay)
    }
}

/// Sends `req`, backing off on 429 and mapping auth failures to credential
/// errors. Other non-2xx statuses become [`CorpusError::Http`].
pub fn send_checked(
    transport: &dyn Transport,
    req: &HttpRequest,
    policy: &RetryPolicy,
    service: &'static str,
    sleep: &dyn Fn(Duration),
) -> Result<HttpResponse> {
    let mut attempt = 0u32;
    loop {
        let resp = transport.send(req)?;
        match resp.status {
            200..=299 => return Ok(resp),
            401 | 403 => {
                return Err(CorpusError::Credential {
                    service,
                    detail: format!("HTTP {}", resp.status),
                })
            }
            429 if attempt < policy.max_retries => {
                let d = policy.delay(attempt);
                log::warn!("{service}: rate limited, retrying in {d:?}");
                sleep(d);
                attempt += 1;
            }
            429 => {
                return Err(CorpusError::RateLimited {
                    url: redact_url(&req.url),
                    attempts: attempt + 1,
                })
            }
            status => {
                return Err(CorpusError::Http {
                    status,
                    url: redact_url(&req.url),
                })
            }
        }
    }
}
