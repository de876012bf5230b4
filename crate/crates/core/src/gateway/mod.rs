//! Clients for the external model capabilities: chat completion,
//! embeddings, and clause classification.
//!
//! Every client sits on a [`Transport`], either HTTP/JSON against a real
//! endpoint or an in-process [`mock::MockTransport`] selected with a
//! `mock:<mode>` base URL. Retries, backoff and the per-backend
//! concurrency cap live in [`ModelClient`] and apply to both.

mod http;
pub mod mock;

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{Document, NUM_LABELS};

pub use http::HttpTransport;

pub const API_KEY_ENV: &str = "CLAUSEPIPE_API_KEY";
pub const EMBED_BATCH_SIZE: usize = 128;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 8192;

pub const CHAT_PATH: &str = "chat/completions";
pub const EMBED_PATH: &str = "embeddings";
pub const CLASSIFY_PATH: &str = "classify";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// HTTP base such as `http://localhost:8000/v1`, or `mock:<mode>`.
    pub base_url: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub backoff_base_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: String::new(),
            model_name: String::new(),
            api_key: None,
            timeout_ms: 120_000,
            max_retries: 3,
            max_concurrency: 4,
            backoff_base_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn mock(mode: &str) -> Self {
        BackendConfig {
            base_url: format!("mock:{mode}"),
            model_name: format!("mock-{mode}"),
            backoff_base_ms: 1,
            ..BackendConfig::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock:")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |msg: &str| Err(GatewayError::InvalidConfig(msg.to_string()));
        if self.base_url.is_empty() {
            return invalid("base_url is empty");
        }
        if self.timeout_ms == 0 {
            return invalid("timeout must be positive");
        }
        if self.max_concurrency == 0 {
            return invalid("max_concurrency must be at least 1");
        }
        Ok(())
    }

    fn resolved_api_key(&self) -> Option<String> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .or_else(|| self.api_key.clone())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("request {request_id} timed out")]
    Timeout { request_id: String },
    #[error("request {request_id}: transport error: {message}")]
    Transport { request_id: String, message: String },
    #[error("request {request_id}: backend returned {status}: {body}")]
    Backend {
        request_id: String,
        status: u16,
        body: String,
    },
    #[error("request {request_id} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        request_id: String,
        attempts: u32,
        last: String,
    },
    #[error("request {request_id}: malformed response: {detail}")]
    Protocol { request_id: String, detail: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Failure of a single attempt, before retry policy is applied.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    Connection(String),
    Status { code: u16, body: String },
    Decode(String),
}

impl TransportFailure {
    fn is_retryable(&self) -> bool {
        match self {
            TransportFailure::Timeout | TransportFailure::Connection(_) => true,
            TransportFailure::Status { code, .. } => *code == 429 || *code >= 500,
            TransportFailure::Decode(_) => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            TransportFailure::Timeout => "timeout".into(),
            TransportFailure::Connection(m) => format!("connection: {m}"),
            TransportFailure::Status { code, body } => format!("status {code}: {body}"),
            TransportFailure::Decode(m) => format!("decode: {m}"),
        }
    }

    fn into_error(self, request_id: String) -> GatewayError {
        match self {
            TransportFailure::Timeout => GatewayError::Timeout { request_id },
            TransportFailure::Connection(message) => GatewayError::Transport {
                request_id,
                message,
            },
            TransportFailure::Status { code, body } => GatewayError::Backend {
                request_id,
                status: code,
                body,
            },
            TransportFailure::Decode(detail) => GatewayError::Protocol { request_id, detail },
        }
    }
}

/// One JSON POST to `path` under the backend's base URL.
///
/// `request_id` stays fixed across retries of the same logical request.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &Value, request_id: &str) -> Result<Value, TransportFailure>;
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(cap: usize) -> Self {
        Limiter {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap,
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_content: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Temperature 0 request with the default output budget.
    pub fn new(system_prompt: impl Into<String>, user_content: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            user_content: user_content.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletion {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResponse {
    pub probabilities: Vec<f64>,
}

/// A backend client: retrying, concurrency-capped calls over a transport.
pub struct ModelClient {
    cfg: BackendConfig,
    transport: Arc<dyn Transport>,
    limiter: Limiter,
    issued: Mutex<HashMap<String, u32>>,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient")
            .field("base_url", &self.cfg.base_url)
            .field("model_name", &self.cfg.model_name)
            .finish()
    }
}

impl ModelClient {
    /// HTTP client, or a mock for `mock:<mode>` URLs.
    pub fn from_config(cfg: BackendConfig) -> Result<Self, GatewayError> {
        Self::from_config_with_references(cfg, &[])
    }

    /// Like [`ModelClient::from_config`]; `references` seed the
    /// `mock:oracle` classifier with the annotated labels.
    pub fn from_config_with_references(
        cfg: BackendConfig,
        references: &[Document],
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let transport: Arc<dyn Transport> = match cfg.base_url.strip_prefix("mock:") {
            Some(mode) => {
                let mode = mock::MockMode::parse(mode, references)?;
                Arc::new(mock::MockTransport::new(mode))
            }
            None => Arc::new(HttpTransport::new(
                &cfg.base_url,
                cfg.resolved_api_key(),
                Duration::from_millis(cfg.timeout_ms),
            )),
        };
        Ok(Self::with_transport(cfg, transport))
    }

    pub fn with_transport(cfg: BackendConfig, transport: Arc<dyn Transport>) -> Self {
        let cap = cfg.max_concurrency.max(1);
        ModelClient {
            cfg,
            transport,
            limiter: Limiter::new(cap),
            issued: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// Content-derived id: model, request digest, and how many identical
    /// requests this client issued before. Independent of thread timing.
    fn request_id(&self, path: &str, body: &Value) -> String {
        let digest = crate::prompts::sha256_hex(format!("{path}\n{body}").as_bytes());
        let digest = &digest[..12];
        let mut issued = self.issued.lock().unwrap_or_else(|e| e.into_inner());
        let n = issued.entry(digest.to_string()).or_insert(0);
        let id = format!("{}-{digest}-{n}", self.cfg.model_name);
        *n += 1;
        id
    }

    /// Exponential backoff with ±20% jitter drawn from a generator seeded
    /// by the request id, so retries are spread but reproducible.
    fn backoff(&self, request_id: &str, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let seed = request_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
        });
        let jitter = ChaCha8Rng::seed_from_u64(seed ^ attempt as u64).random_range(0.8..=1.2);
        Duration::from_secs_f64(base * jitter / 1000.0)
    }

    /// Posts `body`, retrying transient failures with exponential backoff.
    fn call(&self, path: &str, body: &Value) -> Result<(String, Value), GatewayError> {
        let request_id = self.request_id(path, body);
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.post(path, body, &request_id)
            };
            match outcome {
                Ok(value) => return Ok((request_id, value)),
                Err(failure) if !failure.is_retryable() => {
                    return Err(failure.into_error(request_id))
                }
                Err(failure) if attempt >= self.cfg.max_retries => {
                    return Err(GatewayError::RetriesExhausted {
                        request_id,
                        attempts: attempt + 1,
                        last: failure.describe(),
                    })
                }
                Err(_) => {
                    std::thread::sleep(self.backoff(&request_id, attempt));
                    attempt += 1;
                }
            }
        }
    }

    pub fn chat_complete(&self, req: &ChatRequest) -> Result<ChatCompletion, GatewayError> {
        let body = json!({
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_content},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let (request_id, value) = self.call(CHAT_PATH, &body)?;
        let protocol = |detail: &str| GatewayError::Protocol {
            request_id: request_id.clone(),
            detail: detail.to_string(),
        };
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| protocol("missing choices[0].message.content"))?;
        let usage = |key: &str| {
            value
                .pointer(&format!("/usage/{key}"))
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        Ok(ChatCompletion {
            content: content.to_string(),
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }

    /// One vector per text, in input order, requested in batches of at most
    /// [`EMBED_BATCH_SIZE`].
    pub fn embed<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput("no texts to embed"));
        }
        let mut vectors = Vec::with_capacity(texts.len());
        for batch in texts.chunks(EMBED_BATCH_SIZE) {
            let input: Vec<&str> = batch.iter().map(AsRef::as_ref).collect();
            let body = json!({"model": self.cfg.model_name, "input": input});
            let (request_id, value) = self.call(EMBED_PATH, &body)?;
            vectors.extend(self.parse_embeddings(&request_id, &value, batch.len())?);
        }
        Ok(vectors)
    }

    fn parse_embeddings(
        &self,
        request_id: &str,
        value: &Value,
        expected: usize,
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let protocol = |detail: String| GatewayError::Protocol {
            request_id: request_id.to_string(),
            detail,
        };
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("missing data array".into()))?;
        if data.len() != expected {
            return Err(protocol(format!(
                "expected {expected} embeddings, got {}",
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| protocol(format!("data[{pos}] has no embedding")))?
                .iter()
                .map(|v| v.as_f64().filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| protocol(format!("data[{pos}] has non-numeric entries")))?;
            if values.is_empty() {
                return Err(protocol(format!("data[{pos}] is empty")));
            }
            let slot = slots
                .get_mut(index)
                .ok_or_else(|| protocol(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector {
                values,
                model_name: self.cfg.model_name.clone(),
            });
        }
        slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| protocol("duplicate embedding indices".into()))
    }

    pub fn classify(&self, clause_text: &str) -> Result<ClassificationResponse, GatewayError> {
        if clause_text.trim().is_empty() {
            return Err(GatewayError::EmptyInput("clause text is empty"));
        }
        let (request_id, value) = self.call(CLASSIFY_PATH, &json!({"text": clause_text}))?;
        let probabilities: Option<Vec<f64>> = value
            .get("probabilities")
            .and_then(Value::as_array)
            .and_then(|arr| arr.iter().map(Value::as_f64).collect());
        match probabilities {
            Some(p) if p.len() == NUM_LABELS && p.iter().all(|x| (0.0..=1.0).contains(x)) => {
                Ok(ClassificationResponse { probabilities: p })
            }
            Some(p) if p.len() != NUM_LABELS => Err(GatewayError::Protocol {
                request_id,
                detail: format!("expected {NUM_LABELS} probabilities, got {}", p.len()),
            }),
            _ => Err(GatewayError::Protocol {
                request_id,
                detail: "probabilities must be 14 numbers in [0, 1]".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockMode, MockTransport};
    use super::*;

    fn client(mode: MockMode, max_retries: u32) -> (ModelClient, Arc<MockTransport>) {
        let transport = Arc::new(MockTransport::new(mode));
        let cfg = BackendConfig {
            max_retries,
            ..BackendConfig::mock("test")
        };
        (
            ModelClient::with_transport(cfg, transport.clone()),
            transport,
        )
    }

    #[test]
    fn echo_segment_wraps_clauses() {
        let (c, _) = client(MockMode::EchoSegment, 0);
        let doc = "<document>\nFirst clause.\n\nSecond clause.\n\nThird clause.\n</document>";
        let out = c.chat_complete(&ChatRequest::new("segment", doc)).unwrap();
        let clauses = crate::corpus::extract_clause_blocks(&out.content);
        assert_eq!(
            clauses,
            vec!["First clause.", "Second clause.", "Third clause."]
        );
        assert!(out.prompt_tokens > 0);
    }

    #[test]
    fn fail_twice_succeeds_on_third_attempt() {
        let (c, t) = client(MockMode::FailTwice, 2);
        let out = c.chat_complete(&ChatRequest::new("s", "<document>A.</document>"));
        assert!(out.is_ok());
        let ledger = t.ledger();
        assert_eq!(ledger.attempts, 3);
        assert!(ledger.delivered.values().all(|&n| n == 1));
    }

    #[test]
    fn always_fail_exhausts_retries() {
        let (c, t) = client(MockMode::AlwaysFail, 1);
        match c.chat_complete(&ChatRequest::new("s", "u")) {
            Err(GatewayError::RetriesExhausted {
                attempts,
                request_id,
                ..
            }) => {
                assert_eq!(attempts, 2);
                assert!(!request_id.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.ledger().attempts, 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let mode = MockMode::custom(|_, _| {
            Err(TransportFailure::Status {
                code: 400,
                body: "bad".into(),
            })
        });
        let (c, t) = client(mode, 3);
        assert!(matches!(
            c.chat_complete(&ChatRequest::new("s", "u")),
            Err(GatewayError::Backend { status: 400, .. })
        ));
        assert_eq!(t.ledger().attempts, 1);
    }

    #[test]
    fn hash_embeddings_are_deterministic_and_ordered() {
        let (c, _) = client(MockMode::HashEmbed, 0);
        let v = c.embed(&["alpha beta", "gamma", "alpha beta"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], v[2]);
        assert_ne!(v[0], v[1]);
        assert!(c.embed::<&str>(&[]).is_err());
    }

    #[test]
    fn embeddings_are_batched() {
        let (c, t) = client(MockMode::HashEmbed, 0);
        let texts: Vec<String> = (0..300).map(|i| format!("text {i}")).collect();
        let v = c.embed(&texts).unwrap();
        assert_eq!(v.len(), 300);
        assert_eq!(t.ledger().attempts, 3);
        assert_eq!(v[299], c.embed(&["text 299"]).unwrap()[0]);
    }

    #[test]
    fn keyword_classifier() {
        let (c, _) = client(MockMode::Keyword, 0);
        let p = c
            .classify("This Agreement is subject to the governing law of Delaware.")
            .unwrap()
            .probabilities;
        assert!(p[12] >= 0.9);
        let p = c
            .classify("Lorem ipsum dolor sit amet.")
            .unwrap()
            .probabilities;
        assert!(p.iter().all(|&x| x <= 0.1));
    }

    #[test]
    fn wrong_arity_is_a_protocol_error() {
        let (c, _) = client(MockMode::Malformed, 0);
        assert!(matches!(
            c.classify("anything"),
            Err(GatewayError::Protocol { .. })
        ));
    }

    #[test]
    fn concurrency_cap_is_respected() {
        let transport = Arc::new(
            MockTransport::new(MockMode::HashEmbed).with_latency(Duration::from_millis(20)),
        );
        let cfg = BackendConfig {
            max_concurrency: 2,
            ..BackendConfig::mock("cap")
        };
        let client = ModelClient::with_transport(cfg, transport.clone());
        std::thread::scope(|s| {
            for i in 0..8 {
                let client = &client;
                s.spawn(move || client.embed(&[format!("t{i}")]).unwrap());
            }
        });
        let ledger = transport.ledger();
        assert_eq!(ledger.attempts, 8);
        assert!(ledger.high_water <= 2, "high water {}", ledger.high_water);
        assert_eq!(ledger.high_water, 2);
    }

    #[test]
    fn mock_urls_select_modes() {
        let c = ModelClient::from_config(BackendConfig::mock("keyword")).unwrap();
        assert!(c.classify("governing law").is_ok());
        assert!(ModelClient::from_config(BackendConfig::mock("no-such-mode")).is_err());
        assert!(ModelClient::from_config(BackendConfig::default()).is_err());
    }
}
