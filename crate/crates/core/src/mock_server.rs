//! OpenAI-compatible mock endpoint backed by the simulated oracle.
//!
//! Serves `POST /v1/chat/completions` with the same wire shapes the client
//! consumes (message content, per-token `top_logprobs`, usage), so the full
//! HTTP path can be exercised without network access to real providers.
//! Response N is deterministic under a fixed base seed: each request's
//! oracle seed derives from `(base_seed, request_index)`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::oracle::{derive_seed, estimate_tokens, oracle_respond, AgentContext, OracleConfig};

struct MockState {
    ctx: AgentContext,
    cfg: OracleConfig,
    counter: AtomicU64,
}

#[derive(Debug, Deserialize)]
struct IncomingChat {
    #[serde(default)]
    messages: Vec<IncomingMessage>,
    #[serde(default)]
    logprobs: bool,
    #[serde(default)]
    top_logprobs: Option<usize>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Debug, Deserialize)]
struct IncomingMessage {
    role: String,
    content: String,
}

async fn health() -> &'static str {
    "ok"
}

async fn chat_completions(
    State(state): State<Arc<MockState>>,
    Json(request): Json<IncomingChat>,
) -> impl IntoResponse {
    let Some(prompt) = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map(|m| m.content.clone())
    else {
        return error_response(StatusCode::BAD_REQUEST, "no user message in request");
    };

    let index = state.counter.fetch_add(1, Ordering::SeqCst);
    let mut cfg = state.cfg.clone();
    cfg.rng_seed = derive_seed(state.cfg.rng_seed, 0x6D6F_636B, index);
    if let Some(k) = request.top_logprobs {
        cfg.k = k.max(1);
    }

    let (text, records) = match oracle_respond(&state.ctx, &prompt, &cfg) {
        Ok(out) => out,
        Err(err) => return error_response(StatusCode::BAD_REQUEST, &err.to_string()),
    };

    let prompt_tokens: u64 = request
        .messages
        .iter()
        .map(|m| estimate_tokens(&m.content))
        .sum();
    let completion_tokens = estimate_tokens(&text);

    let logprobs_value: Value = if request.logprobs {
        json!({
            "content": records
                .iter()
                .map(|r| {
                    json!({
                        "token": r.text,
                        "logprob": r.logprob,
                        "top_logprobs": r.top_k
                            .iter()
                            .map(|t| json!({"token": t.token, "logprob": t.logprob}))
                            .collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>(),
        })
    } else {
        Value::Null
    };

    let body = json!({
        "id": format!("sim-{index}"),
        "object": "chat.completion",
        "model": request.model.unwrap_or_else(|| cfg.model_id.clone()),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "logprobs": logprobs_value,
            "finish_reason": "stop",
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens,
        },
    });
    (StatusCode::OK, Json(body)).into_response()
}

fn error_response(status: StatusCode, message: &str) -> axum::response::Response {
    let body = json!({"error": {"message": message, "type": "invalid_request_error"}});
    (status, Json(body)).into_response()
}

/// Handle to a running mock endpoint. Dropping it (or calling
/// [`MockServer::shutdown`]) stops the server.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Bind and serve. Port 0 picks an ephemeral port.
    pub async fn spawn(
        ctx: AgentContext,
        cfg: OracleConfig,
        port: u16,
    ) -> std::io::Result<MockServer> {
        let state = Arc::new(MockState {
            ctx,
            cfg,
            counter: AtomicU64::new(0),
        });
        let app = Router::new()
            .route("/", get(health))
            .route("/v1/chat/completions", post(chat_completions))
            .with_state(state);
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }

    /// Run until the server task exits (the CLI's serve loop).
    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ApiClient, ChatMessage, EndpointConfig};
    use crate::oracle::Role;
    use crate::pii::{PiiCategory, PiiRecord};
    use crate::prompt::build_attack_prompt;

    fn sim_context() -> AgentContext {
        let mut ctx = AgentContext::new();
        ctx.push_turn(Role::System, "You are a helpful assistant.");
        let record = PiiRecord::new("r1", "1234567890", PiiCategory::Phone).unwrap();
        ctx.disclose(record, "My phone number is 1234567890.").unwrap();
        ctx
    }

    #[tokio::test]
    async fn serves_chat_completions_with_logprobs() {
        let server = MockServer::spawn(sim_context(), OracleConfig::default(), 0)
            .await
            .unwrap();
        let cfg = EndpointConfig::new(server.base_url(), "sim-oracle");
        let client = ApiClient::new(cfg).unwrap();
        let prompt = build_attack_prompt("our chat", PiiCategory::Phone);
        let outcome = client.chat(&[ChatMessage::user(prompt)], true).await.unwrap();
        assert!(outcome.text.contains("\\boxed{"));
        assert_eq!(outcome.records.len(), 10);
        assert!(outcome.usage.prompt_tokens > 0);
        server.shutdown();
    }

    #[tokio::test]
    async fn preflight_sees_the_server() {
        let server = MockServer::spawn(sim_context(), OracleConfig::default(), 0)
            .await
            .unwrap();
        let cfg = EndpointConfig::new(server.base_url(), "sim-oracle");
        let client = ApiClient::new(cfg).unwrap();
        client.preflight().await.unwrap();
    }

    #[tokio::test]
    async fn unknown_category_is_a_request_error() {
        let server = MockServer::spawn(sim_context(), OracleConfig::default(), 0)
            .await
            .unwrap();
        let cfg = EndpointConfig::new(server.base_url(), "sim-oracle");
        let client = ApiClient::new(cfg).unwrap();
        let prompt = build_attack_prompt("our chat", PiiCategory::Ssn);
        let err = client
            .chat(&[ChatMessage::user(prompt)], false)
            .await
            .unwrap_err();
        assert!(matches!(err, crate::client::ClientError::Http { status: 400, .. }));
    }
}
