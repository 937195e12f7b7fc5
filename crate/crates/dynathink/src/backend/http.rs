//! Live completion client speaking the common chat-completions JSON
//! convention (model id, message list, temperature, `n` completions).
//!
//! The client retries transport failures, HTTP 429 and 5xx responses with
//! exponential backoff and jitter, keeps a configurable cap on in-flight
//! requests, and spreads calls under a per-minute budget. Other client
//! errors fail fast: a 401 will not fix itself on attempt three.

use std::collections::VecDeque;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

use super::{Backend, BackendError, GenerationRequest, DEFAULT_API_KEY_ENV};

const MINUTE: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    /// Full URL of the completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer token; requests go out
    /// unauthenticated when the variable is unset (local servers).
    pub api_key_env: String,
    /// Total tries per request, first attempt included.
    pub max_attempts: u32,
    /// Backoff before the second attempt; doubles per retry, with jitter.
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
    /// Concurrent requests allowed at once.
    pub max_in_flight: usize,
    /// Requests allowed per sliding minute; 0 disables throttling.
    pub requests_per_minute: u32,
    /// Fetch k samples via the native `n` field in one call when true,
    /// else issue k sequential single-completion calls.
    pub native_multi_sample: bool,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_attempts: 4,
            initial_backoff: Duration::from_millis(250),
            request_timeout: Duration::from_secs(120),
            max_in_flight: 8,
            requests_per_minute: 0,
            native_multi_sample: true,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    n: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

enum AttemptError {
    /// Transport failure, 429, or 5xx — worth another try.
    Retryable(String),
    Fatal(BackendError),
}

/// Chat-completions client with retry, concurrency, and rate budgets.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::Client,
    token: Option<String>,
    in_flight: Semaphore,
    window: Mutex<VecDeque<Instant>>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::BadResponse(format!("client construction: {e}")))?;
        let token = std::env::var(&config.api_key_env).ok();
        Ok(HttpBackend {
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            window: Mutex::new(VecDeque::new()),
            config,
            client,
            token,
        })
    }

    /// Block until the sliding-minute window has room, then claim a slot.
    async fn throttle(&self) {
        if self.config.requests_per_minute == 0 {
            return;
        }
        loop {
            let wait = {
                let mut window = self.window.lock().await;
                let now = Instant::now();
                while window
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= MINUTE)
                {
                    window.pop_front();
                }
                if (window.len() as u32) < self.config.requests_per_minute {
                    window.push_back(now);
                    None
                } else {
                    Some(MINUTE - now.duration_since(*window.front().unwrap()))
                }
            };
            match wait {
                None => return,
                Some(delay) => tokio::time::sleep(delay).await,
            }
        }
    }

    async fn post_once(&self, body: &ChatRequest<'_>) -> Result<Vec<String>, AttemptError> {
        self.throttle().await;
        let _permit = self.in_flight.acquire().await.expect("semaphore never closes");
        let mut request = self.client.post(&self.config.endpoint).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .await
            .map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            let detail = response.text().await.unwrap_or_default();
            return Err(AttemptError::Retryable(format!("status {status}: {detail}")));
        }
        if !status.is_success() {
            let detail = response.text().await.unwrap_or_default();
            return Err(AttemptError::Fatal(BackendError::BadStatus {
                status: status.as_u16(),
                detail,
            }));
        }
        let parsed: ChatResponse = response
            .json()
            .await
            .map_err(|e| AttemptError::Fatal(BackendError::BadResponse(e.to_string())))?;
        if parsed.choices.len() != body.n as usize {
            return Err(AttemptError::Fatal(BackendError::BadResponse(format!(
                "requested {} completions, got {}",
                body.n,
                parsed.choices.len()
            ))));
        }
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content)
            .collect())
    }

    async fn post_with_retry(&self, body: &ChatRequest<'_>) -> Result<Vec<String>, BackendError> {
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.post_once(body).await {
                Ok(texts) => return Ok(texts),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(detail)) => {
                    tracing::debug!(attempt, %detail, "retryable completion failure");
                    last = detail;
                    if attempt < self.config.max_attempts {
                        let exponent = attempt.saturating_sub(1).min(16);
                        let base = self.config.initial_backoff * 2u32.pow(exponent);
                        let jitter = rand::rng().random_range(0.5..1.5);
                        tokio::time::sleep(base.mul_f64(jitter)).await;
                    }
                }
            }
        }
        Err(BackendError::Exhausted {
            attempts: self.config.max_attempts,
            last,
        })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn generate(
        &self,
        _question_id: &str,
        _start_ordinal: u32,
        request: &GenerationRequest,
    ) -> Result<Vec<String>, BackendError> {
        request.validate()?;
        let body = |n: u32| ChatRequest {
            model: &request.model_id,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            n,
        };
        if self.config.native_multi_sample {
            return self.post_with_retry(&body(request.k)).await;
        }
        let mut texts = Vec::with_capacity(request.k as usize);
        for _ in 0..request.k {
            texts.extend(self.post_with_retry(&body(1)).await?);
        }
        Ok(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::extract::State;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::{Json, Router};
    use serde_json::{json, Value};
    use std::net::SocketAddr;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    async fn spawn(app: Router) -> SocketAddr {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        addr
    }

    fn config(addr: SocketAddr) -> HttpBackendConfig {
        HttpBackendConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            api_key_env: "DYNATHINK_HTTP_TEST_UNSET".to_string(),
            max_attempts: 4,
            initial_backoff: Duration::from_millis(1),
            request_timeout: Duration::from_secs(5),
            ..HttpBackendConfig::default()
        }
    }

    fn request(k: u32) -> GenerationRequest {
        GenerationRequest {
            prompt: "Step : solve it".to_string(),
            k,
            temperature: 0.7,
            max_tokens: 128,
            model_id: "test-model".to_string(),
        }
    }

    fn choices(n: u64, tag: u32) -> Value {
        let list: Vec<Value> = (0..n)
            .map(|i| json!({"message": {"content": format!("Step : completion {tag}-{i}")}}))
            .collect();
        json!({ "choices": list })
    }

    /// Succeeds after `fail_first` responses with `fail_status`.
    fn flaky_app(fail_first: u32, fail_status: u16, hits: Arc<AtomicU32>) -> Router {
        Router::new().route(
            "/v1/chat/completions",
            post(move |State(hits): State<Arc<AtomicU32>>, Json(body): Json<Value>| async move {
                let hit = hits.fetch_add(1, Ordering::SeqCst);
                if hit < fail_first {
                    return (
                        StatusCode::from_u16(fail_status).unwrap(),
                        Json(json!({"error": "try later"})),
                    );
                }
                let n = body["n"].as_u64().unwrap_or(1);
                (StatusCode::OK, Json(choices(n, hit)))
            }),
        )
        .with_state(hits)
    }

    #[tokio::test]
    async fn multi_sample_uses_one_call() {
        let hits = Arc::new(AtomicU32::new(0));
        let addr = spawn(flaky_app(0, 500, hits.clone())).await;
        let backend = HttpBackend::new(config(addr)).unwrap();
        let texts = backend.generate("q", 0, &request(3)).await.unwrap();
        assert_eq!(texts.len(), 3);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn sequential_mode_issues_k_single_calls() {
        let hits = Arc::new(AtomicU32::new(0));
        let addr = spawn(flaky_app(0, 500, hits.clone())).await;
        let backend = HttpBackend::new(HttpBackendConfig {
            native_multi_sample: false,
            ..config(addr)
        })
        .unwrap();
        let texts = backend.generate("q", 0, &request(3)).await.unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        // One completion per call, in call order.
        assert_eq!(
            texts,
            ["Step : completion 0-0", "Step : completion 1-0", "Step : completion 2-0"]
        );
    }

    #[tokio::test]
    async fn server_errors_are_retried_until_success() {
        let hits = Arc::new(AtomicU32::new(0));
        let addr = spawn(flaky_app(2, 500, hits.clone())).await;
        let backend = HttpBackend::new(config(addr)).unwrap();
        let texts = backend.generate("q", 0, &request(1)).await.unwrap();
        assert_eq!(texts.len(), 1);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn rate_limit_responses_are_retried() {
        let hits = Arc::new(AtomicU32::new(0));
        let addr = spawn(flaky_app(1, 429, hits.clone())).await;
        let backend = HttpBackend::new(config(addr)).unwrap();
        backend.generate("q", 0, &request(1)).await.unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }

    #[tokio::test]
    async fn retries_exhaust_into_a_typed_error() {
        let hits = Arc::new(AtomicU32::new(0));
        let addr = spawn(flaky_app(u32::MAX, 503, hits.clone())).await;
        let backend = HttpBackend::new(HttpBackendConfig {
            max_attempts: 3,
            ..config(addr)
        })
        .unwrap();
        let err = backend.generate("q", 0, &request(1)).await.unwrap_err();
        match err {
            BackendError::Exhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected Exhausted, got {other}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn client_errors_fail_fast() {
        let hits = Arc::new(AtomicU32::new(0));
        let app = Router::new().route(
            "/v1/chat/completions",
            post(move |State(hits): State<Arc<AtomicU32>>| async move {
                hits.fetch_add(1, Ordering::SeqCst);
                (StatusCode::BAD_REQUEST, Json(json!({"error": "no such model"})))
            }),
        )
        .with_state(hits.clone());
        let addr = spawn(app).await;
        let backend = HttpBackend::new(config(addr)).unwrap();
        let err = backend.generate("q", 0, &request(1)).await.unwrap_err();
        assert!(matches!(err, BackendError::BadStatus { status: 400, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn short_choice_lists_are_rejected_without_retry() {
        let hits = Arc::new(AtomicU32::new(0));
        let app = Router::new().route(
            "/v1/chat/completions",
            post(move |State(hits): State<Arc<AtomicU32>>| async move {
                hits.fetch_add(1, Ordering::SeqCst);
                (StatusCode::OK, Json(choices(1, 0)))
            }),
        )
        .with_state(hits.clone());
        let addr = spawn(app).await;
        let backend = HttpBackend::new(config(addr)).unwrap();
        let err = backend.generate("q", 0, &request(2)).await.unwrap_err();
        assert!(matches!(err, BackendError::BadResponse(_)));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn bearer_token_is_attached_when_env_set() {
        let var = "DYNATHINK_HTTP_TEST_TOKEN";
        std::env::set_var(var, "sekrit");
        let app = Router::new().route(
            "/v1/chat/completions",
            post(|headers: HeaderMap, Json(body): Json<Value>| async move {
                let auth = headers
                    .get("authorization")
                    .and_then(|v| v.to_str().ok())
                    .unwrap_or_default();
                if auth != "Bearer sekrit" {
                    return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad token"})));
                }
                (StatusCode::OK, Json(choices(body["n"].as_u64().unwrap_or(1), 0)))
            }),
        );
        let addr = spawn(app).await;
        let backend = HttpBackend::new(HttpBackendConfig {
            api_key_env: var.to_string(),
            max_attempts: 1,
            ..config(addr)
        })
        .unwrap();
        backend.generate("q", 0, &request(1)).await.unwrap();
    }
}
