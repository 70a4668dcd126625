//! Access to chat-completion models: retries, JSON validation with repair
//! prompts, rate limiting and swappable transports.

pub(crate) mod http;
mod limiter;
mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{OpenAiTransport, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL, DEFAULT_MODEL};
pub use limiter::{Permit, RateLimiter};
pub use mock::{FnTransport, MockScript, MockTransport, OnExhausted};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("network: {0}")]
    Network(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("{0}")]
    ScriptExhausted(String),
}

impl TransportError {
    /// Rate limiting, server errors and network failures are worth retrying;
    /// other client errors are not.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Http { status, .. } => *status == 429 || *status >= 500,
            TransportError::Network(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request rejected: {0}")]
    InvalidRequest(String),
    #[error("no schema registered under `{0}`")]
    UnknownSchema(String),
    #[error("{operator}: transport failed on attempt {attempt}: {source}")]
    Transport {
        operator: String,
        attempt: u32,
        #[source]
        source: TransportError,
    },
    #[error("{operator}: no valid `{schema}` reply after {attempts} attempts: {last_error}")]
    Parse {
        operator: String,
        schema: String,
        attempts: u32,
        last_error: String,
        raw: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a transport is asked to send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub operator: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub fingerprint: Option<String>,
    /// 1 for the first attempt, incremented for repair attempts.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Usage,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Text,
    /// Reply must contain a JSON object accepted by the named schema.
    Json(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayRequest {
    pub operator: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub expect: Expect,
    pub fingerprint: Option<String>,
}

impl GatewayRequest {
    pub fn new(operator: &str, prompt: impl Into<String>, expect: Expect) -> Self {
        GatewayRequest {
            operator: operator.to_string(),
            prompt: prompt.into(),
            temperature: 0.2,
            max_tokens: 2048,
            expect,
            fingerprint: None,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    /// Tags the request with a fingerprint of the operator and its inputs,
    /// used by fingerprint-matched mock scripts.
    pub fn fingerprint_slots(mut self, slots: &[(&str, &str)]) -> Self {
        self.fingerprint = Some(fingerprint(&self.operator, slots));
        self
    }
}

/// Hex SHA-256 over the operator name and `name=value` pairs sorted by name.
pub fn fingerprint(operator: &str, slots: &[(&str, &str)]) -> String {
    let mut sorted: Vec<_> = slots.to_vec();
    sorted.sort();
    let mut h = Sha256::new();
    h.update(operator.as_bytes());
    for (k, v) in sorted {
        h.update([0u8]);
        h.update(k.as_bytes());
        h.update(b"=");
        h.update((v.len() as u64).to_le_bytes());
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}

/// One transport round trip that produced text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attempt {
    pub raw_text: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub raw_text: String,
    /// Present iff the request expected JSON and validation passed.
    pub parsed: Option<Value>,
    pub usage: Usage,
    pub attempt_count: u32,
    pub attempts: Vec<Attempt>,
}

pub type Validator = fn(&Value) -> Result<(), String>;

/// Named JSON validators.
#[derive(Clone, Default)]
pub struct SchemaRegistry {
    schemas: HashMap<String, Validator>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the rating and fusion operator schemas.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(crate::rating::RATING_SCHEMA, crate::rating::validate_rating);
        crate::fusion::register_schemas(&mut r);
        r
    }

    pub fn register(&mut self, key: &str, validator: Validator) {
        self.schemas.insert(key.to_string(), validator);
    }

    pub fn get(&self, key: &str) -> Option<Validator> {
        self.schemas.get(key).copied()
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Total attempts allowed when a JSON reply fails validation.
    pub retry_budget: u32,
    /// Extra sends allowed for retryable transport failures.
    pub transport_retries: u32,
    /// First backoff delay; doubled on every further transport retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub min_interval: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            retry_budget: 3,
            transport_retries: 4,
            backoff: Duration::from_millis(500),
            max_in_flight: 8,
            min_interval: Duration::ZERO,
        }
    }
}

const REPAIR_PREAMBLE: &str = "Your previous reply could not be used because it was not the \
JSON object requested below. Reply again with only that JSON object: no code fences, no \
commentary, every listed key present.";

/// Shared, thread-safe entry point for every model call.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    schemas: SchemaRegistry,
    limiter: RateLimiter,
    config: GatewayConfig,
    sends: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, config: GatewayConfig) -> Self {
        Gateway {
            transport,
            schemas: SchemaRegistry::builtin(),
            limiter: RateLimiter::new(config.max_in_flight, config.min_interval),
            config,
            sends: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    pub fn with_schemas(mut self, schemas: SchemaRegistry) -> Self {
        self.schemas = schemas;
        self
    }

    pub fn limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    /// Transport sends so far, including retries.
    pub fn sends(&self) -> u64 {
        self.sends.load(Ordering::Relaxed)
    }

    pub fn usage(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }

    pub fn invoke(&self, request: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        let validator = match request.expect {
            Expect::Text => None,
            Expect::Json(key) => Some(
                self.schemas
                    .get(key)
                    .ok_or_else(|| GatewayError::UnknownSchema(key.to_string()))?,
            ),
        };
        let budget = self.config.retry_budget.max(1);
        let mut attempts = Vec::new();
        let mut usage = Usage::default();
        let mut last_error = String::new();
        for attempt in 1..=budget {
            let prompt = if attempt == 1 {
                request.prompt.clone()
            } else {
                format!("{REPAIR_PREAMBLE}\nProblem: {last_error}\n\n{}", request.prompt)
            };
            let chat = ChatRequest {
                operator: request.operator.clone(),
                prompt,
                temperature: request.temperature,
                max_tokens: request.max_tokens,
                fingerprint: request.fingerprint.clone(),
                attempt,
            };
            let reply = self.send(&chat)?;
            usage.prompt_tokens += reply.usage.prompt_tokens;
            usage.completion_tokens += reply.usage.completion_tokens;
            let Some(validate) = validator else {
                attempts.push(Attempt {
                    raw_text: reply.text.clone(),
                    error: None,
                });
                return Ok(GatewayResponse {
                    raw_text: reply.text,
                    parsed: None,
                    usage,
                    attempt_count: attempt,
                    attempts,
                });
            };
            match extract_json(&reply.text).and_then(|v| validate(&v).map(|_| v)) {
                Ok(value) => {
                    attempts.push(Attempt {
                        raw_text: reply.text.clone(),
                        error: None,
                    });
                    return Ok(GatewayResponse {
                        raw_text: reply.text,
                        parsed: Some(value),
                        usage,
                        attempt_count: attempt,
                        attempts,
                    });
                }
                Err(e) => {
                    debug!("{}: attempt {attempt} rejected: {e}", request.operator);
                    last_error = e.clone();
                    attempts.push(Attempt {
                        raw_text: reply.text,
                        error: Some(e),
                    });
                }
            }
        }
        let Expect::Json(schema) = request.expect else {
            unreachable!("text replies return on the first attempt")
        };
        Err(GatewayError::Parse {
            operator: request.operator.clone(),
            schema: schema.to_string(),
            attempts: budget,
            last_error,
            raw: attempts.pop().map(|a| a.raw_text).unwrap_or_default(),
        })
    }

    fn send(&self, chat: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let mut tries = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.sends.fetch_add(1, Ordering::Relaxed);
                self.transport.send(chat)
            };
            match result {
                Ok(reply) => {
                    self.prompt_tokens
                        .fetch_add(reply.usage.prompt_tokens, Ordering::Relaxed);
                    self.completion_tokens
                        .fetch_add(reply.usage.completion_tokens, Ordering::Relaxed);
                    return Ok(reply);
                }
                Err(e) if e.is_retryable() && tries < self.config.transport_retries => {
                    let delay = self.config.backoff * 2u32.saturating_pow(tries);
                    warn!("{}: {e}; retrying in {delay:?}", chat.operator);
                    thread::sleep(delay);
                    tries += 1;
                }
                Err(source) => {
                    return Err(GatewayError::Transport {
                        operator: chat.operator.clone(),
                        attempt: chat.attempt,
                        source,
                    })
                }
            }
        }
    }
}

/// Pulls the first JSON object out of a model reply, tolerating code fences
/// and surrounding prose.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    for (i, _) in trimmed.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&trimmed[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Ok(v);
        }
    }
    Err("reply contains no JSON object".into())
}
