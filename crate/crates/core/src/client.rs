//! HTTP client for OpenAI-compatible chat-completions endpoints with top-k
//! logprob support, usage accounting, and request pacing.
//!
//! Only the ledger and the rate limiter are mutable; both are safe under
//! concurrent use, so one client can serve many attack sessions.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Mutex;
use tokio::time::Instant;

use crate::recovery::{TokenLogprob, TokenRecord};

/// Provider ceiling on the `top_logprobs` parameter.
pub const TOP_LOGPROBS_CEILING: u8 = 20;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("request timed out after {retries} retries")]
    Timeout { retries: u32 },
    #[error("rate limited by provider after {retries} retries")]
    RateLimited { retries: u32 },
    #[error("authentication failed (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
}

/// Connection and sampling parameters for one endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token; requests
    /// go out unauthenticated when unset or empty (mock endpoints).
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub top_logprobs: u8,
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// 0 disables client-side pacing.
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_rpm() -> u32 {
    60
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_env: None,
            temperature: 1.0,
            top_logprobs: 10,
            max_tokens: 10_000,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            requests_per_minute: default_rpm(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.top_logprobs > TOP_LOGPROBS_CEILING {
            return Err(ClientError::InvalidConfig(format!(
                "top_logprobs {} exceeds provider ceiling {TOP_LOGPROBS_CEILING}",
                self.top_logprobs
            )));
        }
        if self.max_tokens < 1 {
            return Err(ClientError::InvalidConfig(
                "max_tokens must be >= 1".to_string(),
            ));
        }
        if self.base_url.is_empty() {
            return Err(ClientError::InvalidConfig("base_url is empty".to_string()));
        }
        Ok(())
    }

    pub fn chat_url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }

    fn api_key(&self) -> Option<String> {
        self.api_key_env
            .as_deref()
            .filter(|name| !name.is_empty())
            .and_then(|name| std::env::var(name).ok())
            .filter(|key| !key.is_empty())
    }
}

/// Monotone per-session token and request counters.
#[derive(Debug, Default)]
pub struct UsageLedger {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    request_count: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub request_count: u64,
}

/// Tokens consumed by a single request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageDelta {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageLedger {
    fn record(&self, delta: UsageDelta) {
        self.prompt_tokens
            .fetch_add(delta.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(delta.completion_tokens, Ordering::Relaxed);
        self.request_count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
            request_count: self.request_count.load(Ordering::Relaxed),
        }
    }
}

/// Minimum-interval pacing derived from `requests_per_minute`.
struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(requests_per_minute: u32) -> Self {
        let interval = (requests_per_minute > 0)
            .then(|| Duration::from_secs_f64(60.0 / requests_per_minute as f64));
        Self {
            interval,
            next_slot: Mutex::new(Instant::now()),
        }
    }

    async fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wake = {
            let mut next = self.next_slot.lock().await;
            let now = Instant::now();
            let slot = if *next > now { *next } else { now };
            *next = slot + interval;
            slot
        };
        tokio::time::sleep_until(wake).await;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".to_string(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".to_string(),
            content: content.into(),
        }
    }
}

/// Parsed outcome of one chat request.
#[derive(Debug, Clone)]
pub struct ChatOutcome {
    pub text: String,
    pub records: Vec<TokenRecord>,
    pub usage: UsageDelta,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    content: Vec<WireTokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct WireTokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireTopEntry>,
}

#[derive(Debug, Deserialize)]
struct WireTopEntry {
    token: String,
    logprob: f64,
}

/// Build the request body. Pure, so dry-run validation can inspect the
/// exact JSON that would go over the wire.
pub fn build_chat_request(
    cfg: &EndpointConfig,
    messages: &[ChatMessage],
    want_logprobs: bool,
) -> serde_json::Value {
    let mut body = json!({
        "model": cfg.model_id,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "logprobs": want_logprobs,
    });
    if want_logprobs {
        body["top_logprobs"] = json!(cfg.top_logprobs);
    }
    body
}

/// Translate a wire response into text plus normalized token records.
pub fn parse_chat_response(
    body: &str,
    want_logprobs: bool,
) -> Result<(String, Vec<TokenRecord>, UsageDelta), ClientError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| ClientError::MalformedResponse(format!("bad JSON: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ClientError::MalformedResponse("no choices".to_string()))?;
    let records = match (want_logprobs, choice.logprobs) {
        (false, _) => Vec::new(),
        (true, None) => {
            return Err(ClientError::MalformedResponse(
                "logprobs requested but absent from response".to_string(),
            ))
        }
        (true, Some(logprobs)) => logprobs
            .content
            .into_iter()
            .map(|t| {
                TokenRecord::new(
                    t.token,
                    t.logprob,
                    t.top_logprobs
                        .into_iter()
                        .map(|e| TokenLogprob {
                            token: e.token,
                            logprob: e.logprob,
                        })
                        .collect(),
                )
                .normalized()
            })
            .collect(),
    };
    let usage = wire
        .usage
        .map(|u| UsageDelta {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok((choice.message.content, records, usage))
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// A shareable chat-completions client.
pub struct ApiClient {
    cfg: EndpointConfig,
    http: reqwest::Client,
    ledger: Arc<UsageLedger>,
    limiter: RateLimiter,
}

impl ApiClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let limiter = RateLimiter::new(cfg.requests_per_minute);
        Ok(Self {
            cfg,
            http,
            ledger: Arc::new(UsageLedger::default()),
            limiter,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    /// Issue one chat-completions request, retrying timeouts, rate limits,
    /// and server errors with exponential backoff. The ledger only counts
    /// responses that actually arrived, so retried failures never
    /// double-count usage.
    pub async fn chat(
        &self,
        messages: &[ChatMessage],
        want_logprobs: bool,
    ) -> Result<ChatOutcome, ClientError> {
        let body = build_chat_request(&self.cfg, messages, want_logprobs);
        let url = self.cfg.chat_url();
        let api_key = self.cfg.api_key();

        let mut attempt = 0u32;
        loop {
            self.limiter.acquire().await;
            let mut request = self.http.post(&url).json(&body);
            if let Some(key) = &api_key {
                request = request.bearer_auth(key);
            }
            let outcome = request.send().await;

            let retryable: bool;
            let err: ClientError;
            match outcome {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let text = response
                            .text()
                            .await
                            .map_err(|e| ClientError::Transport(e.to_string()))?;
                        let (content, records, usage) =
                            parse_chat_response(&text, want_logprobs)?;
                        self.ledger.record(usage);
                        return Ok(ChatOutcome {
                            text: content,
                            records,
                            usage,
                        });
                    }
                    let code = status.as_u16();
                    let body_text = response.text().await.unwrap_or_default();
                    match code {
                        401 | 403 => return Err(ClientError::AuthFailure { status: code }),
                        429 => {
                            retryable = true;
                            err = ClientError::RateLimited { retries: attempt };
                        }
                        500..=599 => {
                            retryable = true;
                            err = ClientError::Http {
                                status: code,
                                body: body_text,
                            };
                        }
                        _ => {
                            return Err(ClientError::Http {
                                status: code,
                                body: body_text,
                            })
                        }
                    }
                }
                Err(e) if e.is_timeout() => {
                    retryable = true;
                    err = ClientError::Timeout { retries: attempt };
                }
                Err(e) => return Err(ClientError::Transport(e.to_string())),
            }

            if !retryable || attempt >= self.cfg.max_retries {
                return Err(err);
            }
            let backoff = Duration::from_millis(250u64.saturating_mul(1 << attempt.min(6)));
            tokio::time::sleep(backoff).await;
            attempt += 1;
        }
    }

    /// Run many prompts with at most `concurrency_limit` in flight. Result
    /// order matches input order; per-prompt failures are carried in place
    /// and never abort the batch.
    pub async fn batch_attack(
        &self,
        prompts: &[String],
        concurrency_limit: usize,
    ) -> Vec<Result<ChatOutcome, ClientError>> {
        let limit = concurrency_limit.max(1);
        stream::iter(prompts.iter().cloned())
            .map(|prompt| async move {
                self.chat(&[ChatMessage::user(prompt)], self.cfg.top_logprobs > 0)
                    .await
            })
            .buffered(limit)
            .collect()
            .await
    }

    /// Cheap connectivity check: any HTTP response (even an error status)
    /// from the base URL counts as reachable.
    pub async fn preflight(&self) -> Result<(), ClientError> {
        self.http
            .get(self.cfg.base_url.trim_end_matches('/'))
            .timeout(Duration::from_secs(self.cfg.timeout_secs.min(10)))
            .send()
            .await
            .map(|_| ())
            .map_err(|e| ClientError::Transport(format!("preflight failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EndpointConfig {
        EndpointConfig::new("http://127.0.0.1:9", "test-model")
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.validate().unwrap();
        c.top_logprobs = 21;
        assert!(c.validate().is_err());
        c.top_logprobs = 20;
        c.max_tokens = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn chat_url_normalizes_trailing_slash() {
        let mut c = cfg();
        c.base_url = "http://host:1234/".to_string();
        assert_eq!(c.chat_url(), "http://host:1234/v1/chat/completions");
    }

    #[test]
    fn request_body_carries_sampling_parameters() {
        let body = build_chat_request(&cfg(), &[ChatMessage::user("hi")], true);
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["max_tokens"], 10_000);
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["top_logprobs"], 10);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");

        let plain = build_chat_request(&cfg(), &[ChatMessage::user("hi")], false);
        assert_eq!(plain["logprobs"], false);
        assert!(plain.get("top_logprobs").is_none());
    }

    #[test]
    fn parse_without_logprobs_yields_text_only() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"logprobs":null}],"usage":{"prompt_tokens":100,"completion_tokens":50,"total_tokens":150}}"#;
        let (text, records, usage) = parse_chat_response(body, false).unwrap();
        assert_eq!(text, "hello");
        assert!(records.is_empty());
        assert_eq!(usage.prompt_tokens, 100);
        assert_eq!(usage.completion_tokens, 50);
    }

    #[test]
    fn parse_missing_logprobs_is_malformed() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hello"},"logprobs":null}]}"#;
        assert!(matches!(
            parse_chat_response(body, true),
            Err(ClientError::MalformedResponse(_))
        ));
    }

    #[test]
    fn parse_normalizes_absent_chosen_token() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"5"},"logprobs":{"content":[{"token":"5","logprob":-0.1,"top_logprobs":[{"token":"3","logprob":-1.0}]}]}}],"usage":{"prompt_tokens":1,"completion_tokens":1,"total_tokens":2}}"#;
        let (_, records, _) = parse_chat_response(body, true).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].top_k[0].token, "5");
        assert_eq!(records[0].top_k[1].token, "3");
    }

    #[tokio::test]
    async fn ledger_accumulates_deltas() {
        let ledger = UsageLedger::default();
        ledger.record(UsageDelta {
            prompt_tokens: 100,
            completion_tokens: 50,
        });
        ledger.record(UsageDelta {
            prompt_tokens: 10,
            completion_tokens: 5,
        });
        let snap = ledger.snapshot();
        assert_eq!(snap.prompt_tokens, 110);
        assert_eq!(snap.completion_tokens, 55);
        assert_eq!(snap.request_count, 2);
    }

    #[tokio::test]
    async fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(6000); // 10ms interval
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire().await;
        }
        // First slot is immediate; the next two cost one interval each.
        assert!(start.elapsed() >= Duration::from_millis(18));
    }
}
