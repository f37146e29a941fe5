//! Chat-completion client.
//!
//! [`HttpChatClient`] speaks the OpenAI-compatible and Anthropic wire formats
//! behind one request shape, retries transient failures with exponential
//! backoff, enforces a per-endpoint sliding-window rate limit and keeps an
//! audit log of every attempt. [`ScriptedClient`] replays canned responses for
//! tests and offline runs.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("scripted client exhausted after {0} responses")]
    Exhausted(usize),
}

/// Prompt sent to a backend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatPrompt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
}

impl ChatPrompt {
    pub fn user(text: impl Into<String>) -> Self {
        ChatPrompt {
            system: None,
            user: text.into(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    /// Backend identifier recorded in trajectory metadata.
    fn id(&self) -> &str;

    fn send_chat(&self, prompt: &ChatPrompt) -> Result<String, LlmError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vendor {
    /// OpenAI-compatible `/chat/completions` (also used by Mistral).
    Openai,
    Mistral,
    Anthropic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointConfig {
    pub name: String,
    pub vendor: Vendor,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::rate_limit")]
    pub rate_limit_per_minute: u32,
    #[serde(default = "defaults::initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "defaults::max_backoff_ms")]
    pub max_backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

mod defaults {
    pub fn timeout_secs() -> f64 {
        60.0
    }
    pub fn max_retries() -> u32 {
        3
    }
    pub fn rate_limit() -> u32 {
        60
    }
    pub fn initial_backoff_ms() -> u64 {
        500
    }
    pub fn max_backoff_ms() -> u64 {
        30_000
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(LlmError::Config(format!("{}: timeoutSecs must be > 0", self.name)));
        }
        if self.rate_limit_per_minute == 0 {
            return Err(LlmError::Config(format!(
                "{}: rateLimitPerMinute must be > 0",
                self.name
            )));
        }
        if self.initial_backoff_ms > self.max_backoff_ms {
            return Err(LlmError::Config(format!(
                "{}: initialBackoffMs exceeds maxBackoffMs",
                self.name
            )));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (0-based): doubling, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(32)).unwrap_or(u64::MAX);
        let ms = self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    fn resolve_key(&self) -> Result<String, LlmError> {
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(LlmError::Config(format!(
                "{}: credential variable {} is not set",
                self.name, self.api_key_env
            ))),
        }
    }

    fn request(&self, key: &str, prompt: &ChatPrompt) -> (String, Vec<(String, String)>, Value) {
        let base = self.base_url.trim_end_matches('/');
        match self.vendor {
            Vendor::Openai | Vendor::Mistral => {
                let mut messages = Vec::new();
                if let Some(s) = &prompt.system {
                    messages.push(json!({"role": "system", "content": s}));
                }
                messages.push(json!({"role": "user", "content": prompt.user}));
                let mut body = json!({"model": self.model, "messages": messages});
                if let Some(t) = self.temperature {
                    body["temperature"] = json!(t);
                }
                if let Some(m) = self.max_tokens {
                    body["max_tokens"] = json!(m);
                }
                (
                    format!("{base}/chat/completions"),
                    vec![("Authorization".into(), format!("Bearer {key}"))],
                    body,
                )
            }
            Vendor::Anthropic => {
                let mut body = json!({
                    "model": self.model,
                    "max_tokens": self.max_tokens.unwrap_or(1024),
                    "messages": [{"role": "user", "content": prompt.user}],
                });
                if let Some(s) = &prompt.system {
                    body["system"] = json!(s);
                }
                if let Some(t) = self.temperature {
                    body["temperature"] = json!(t);
                }
                (
                    format!("{base}/messages"),
                    vec![
                        ("x-api-key".into(), key.to_string()),
                        ("anthropic-version".into(), "2023-06-01".into()),
                    ],
                    body,
                )
            }
        }
    }

    fn extract(&self, body: &Value) -> Option<(String, Option<u64>, Option<u64>)> {
        match self.vendor {
            Vendor::Openai | Vendor::Mistral => Some((
                body["choices"][0]["message"]["content"].as_str()?.to_string(),
                body["usage"]["prompt_tokens"].as_u64(),
                body["usage"]["completion_tokens"].as_u64(),
            )),
            Vendor::Anthropic => {
                let text = body["content"]
                    .as_array()?
                    .iter()
                    .filter_map(|b| b["text"].as_str())
                    .collect::<String>();
                Some((
                    text,
                    body["usage"]["input_tokens"].as_u64(),
                    body["usage"]["output_tokens"].as_u64(),
                ))
            }
        }
    }
}

/// Time source and sleeper. Tests substitute [`VirtualClock`].
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn timestamp_ms(&self) -> u64;
}

pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
    fn timestamp_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when slept on.
#[derive(Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }
    fn sleep(&self, d: Duration) {
        self.sleeps.lock().unwrap().push(d);
        self.advance(d);
    }
    fn timestamp_ms(&self) -> u64 {
        self.now().as_millis() as u64
    }
}

/// Sliding-window limiter: at most `limit` acquisitions in any `window`.
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32) -> Self {
        RateLimiter {
            limit: limit.max(1) as usize,
            window: Duration::from_secs(60),
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = clock.now();
                while issued.front().is_some_and(|&t| now >= t + self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return;
                }
                (issued[0] + self.window) - now
            };
            clock.sleep(wait);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransportError {
    Timeout,
    Io(String),
}

/// One HTTP POST. Implemented over `ureq` for real endpoints.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut req = agent.post(url).header("content-type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        match req.send(body.to_string()) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| TransportError::Io(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Io(e.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExchangeRequest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExchangeResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// One attempted request; `response` is present iff the attempt succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChatExchange {
    pub endpoint: String,
    pub attempt: u32,
    pub timestamp_ms: u64,
    pub request: ExchangeRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ExchangeResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

pub struct HttpChatClient {
    cfg: EndpointConfig,
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    audit: Mutex<Vec<ChatExchange>>,
    audit_path: Option<PathBuf>,
}

impl HttpChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, LlmError> {
        Self::with_parts(cfg, Box::new(UreqTransport), Arc::new(SystemClock::default()))
    }

    pub fn with_parts(
        cfg: EndpointConfig,
        transport: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(HttpChatClient {
            limiter: RateLimiter::per_minute(cfg.rate_limit_per_minute),
            cfg,
            transport,
            clock,
            audit: Mutex::new(Vec::new()),
            audit_path: None,
        })
    }

    /// Also append every exchange to a JSONL file.
    pub fn with_audit_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.audit_path = Some(path.into());
        self
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn audit_log(&self) -> Vec<ChatExchange> {
        self.audit.lock().unwrap().clone()
    }

    fn record(&self, exchange: ChatExchange) {
        if let Some(path) = &self.audit_path {
            let line = serde_json::to_string(&exchange).expect("serializable exchange");
            let res = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = res {
                log::warn!("could not append audit log {}: {e}", path.display());
            }
        }
        self.audit.lock().unwrap().push(exchange);
    }
}

enum Attempt {
    Done(String),
    Transient(LlmError),
    Permanent(LlmError),
}

impl LlmClient for HttpChatClient {
    fn id(&self) -> &str {
        &self.cfg.name
    }

    fn send_chat(&self, prompt: &ChatPrompt) -> Result<String, LlmError> {
        let key = self.cfg.resolve_key()?;
        let (url, headers, body) = self.cfg.request(&key, prompt);
        let timeout = Duration::from_secs_f64(self.cfg.timeout_secs);
        let mut attempt = 0;
        loop {
            self.limiter.acquire(self.clock.as_ref());
            let started = self.clock.now();
            let timestamp_ms = self.clock.timestamp_ms();
            let outcome = self.transport.post(&url, &headers, &body, timeout);
            let latency_ms = (self.clock.now().saturating_sub(started)).as_millis() as u64;

            let mut exchange = ChatExchange {
                endpoint: self.cfg.name.clone(),
                attempt: attempt + 1,
                timestamp_ms,
                request: ExchangeRequest {
                    model: self.cfg.model.clone(),
                    system: prompt.system.clone(),
                    user: prompt.user.clone(),
                },
                response: None,
                error: None,
                temperature: self.cfg.temperature,
            };
            let result = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let parsed = serde_json::from_str::<Value>(&resp.body)
                        .ok()
                        .and_then(|v| self.cfg.extract(&v));
                    match parsed {
                        Some((text, prompt_tokens, completion_tokens)) => {
                            exchange.response = Some(ExchangeResponse {
                                text: text.clone(),
                                latency_ms,
                                prompt_tokens,
                                completion_tokens,
                            });
                            Attempt::Done(text)
                        }
                        None => Attempt::Permanent(LlmError::Transport {
                            status: Some(resp.status),
                            message: "unrecognised response body".into(),
                        }),
                    }
                }
                Ok(resp) => {
                    let err = LlmError::Transport {
                        status: Some(resp.status),
                        message: resp.body.chars().take(200).collect(),
                    };
                    if resp.status == 429 || resp.status >= 500 {
                        Attempt::Transient(err)
                    } else {
                        Attempt::Permanent(err)
                    }
                }
                Err(TransportError::Timeout) => Attempt::Transient(LlmError::Transport {
                    status: None,
                    message: "request timed out".into(),
                }),
                Err(TransportError::Io(m)) => Attempt::Transient(LlmError::Transport {
                    status: None,
                    message: m,
                }),
            };
            if let Attempt::Transient(e) | Attempt::Permanent(e) = &result {
                exchange.error = Some(e.to_string());
            }
            self.record(exchange);

            match result {
                Attempt::Done(text) => return Ok(text),
                Attempt::Permanent(e) => return Err(e),
                Attempt::Transient(e) if attempt >= self.cfg.max_retries => return Err(e),
                Attempt::Transient(e) => {
                    let delay = self.cfg.backoff(attempt);
                    log::info!("{}: {e}; retrying in {delay:?}", self.cfg.name);
                    self.clock.sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Marker prefix that turns a script entry into an injected transport error.
pub const FAILURE_MARKER: &str = "!fail";

#[derive(Clone, Debug, PartialEq)]
pub enum ScriptEntry {
    Reply(String),
    Fail(String),
}

impl From<&str> for ScriptEntry {
    fn from(s: &str) -> Self {
        match s.strip_prefix(FAILURE_MARKER) {
            Some(rest) => ScriptEntry::Fail(rest.trim_start_matches(':').trim().to_string()),
            None => ScriptEntry::Reply(s.to_string()),
        }
    }
}

/// Client that yields a fixed sequence of responses, then errors.
pub struct ScriptedClient {
    id: String,
    script: Mutex<VecDeque<ScriptEntry>>,
    served: Mutex<Vec<ChatPrompt>>,
}

impl ScriptedClient {
    pub fn calls(&self) -> usize {
        self.served.lock().unwrap().len()
    }

    pub fn prompts(&self) -> Vec<ChatPrompt> {
        self.served.lock().unwrap().clone()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

pub fn scripted_client<S: Into<ScriptEntry>>(
    script: impl IntoIterator<Item = S>,
) -> Result<ScriptedClient, LlmError> {
    let script: VecDeque<ScriptEntry> = script.into_iter().map(Into::into).collect();
    if script.is_empty() {
        return Err(LlmError::Config("script must not be empty".into()));
    }
    Ok(ScriptedClient {
        id: "scripted".into(),
        script: Mutex::new(script),
        served: Mutex::new(Vec::new()),
    })
}

impl LlmClient for ScriptedClient {
    fn id(&self) -> &str {
        &self.id
    }

    fn send_chat(&self, prompt: &ChatPrompt) -> Result<String, LlmError> {
        let mut served = self.served.lock().unwrap();
        let n = served.len();
        served.push(prompt.clone());
        match self.script.lock().unwrap().pop_front() {
            Some(ScriptEntry::Reply(text)) => Ok(text),
            Some(ScriptEntry::Fail(message)) => Err(LlmError::Transport {
                status: None,
                message: if message.is_empty() {
                    "injected failure".into()
                } else {
                    message
                },
            }),
            None => Err(LlmError::Exhausted(n)),
        }
    }
}
