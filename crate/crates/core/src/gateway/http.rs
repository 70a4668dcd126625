//! Chat-completions transport over HTTP.
//!
//! Request body sent to `POST {base_url}/chat/completions`:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "user", "content": "..."}],
//!  "temperature": 0.2, "max_tokens": 2048}
//! ```
//!
//! The reply text is read from `choices[0].message.content`; token counts from
//! `usage.prompt_tokens` / `usage.completion_tokens` when present. The bearer
//! token comes from the environment variable named by `api_key_env`.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatReply, ChatRequest, Transport, TransportError, Usage};

pub const DEFAULT_MODEL: &str = "gpt-4o-mini-2024-07-18";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

pub(crate) fn post_json(
    url: &str,
    token: Option<&str>,
    body: &Value,
    timeout: Duration,
) -> Result<Value, TransportError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.post(url).header("accept", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.send_json(body).map_err(|e| match e {
        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::HostNotFound => {
            TransportError::Network(e.to_string())
        }
        other => TransportError::Protocol(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| TransportError::Network(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(TransportError::Http { status, body: text });
    }
    serde_json::from_str(&text)
        .map_err(|e| TransportError::Protocol(format!("reply is not JSON: {e}")))
}

#[derive(Debug, Clone)]
pub struct OpenAiTransport {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
}

impl Default for OpenAiTransport {
    fn default() -> Self {
        OpenAiTransport {
            base_url: DEFAULT_BASE_URL.into(),
            model: DEFAULT_MODEL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout: Duration::from_secs(120),
        }
    }
}

impl Transport for OpenAiTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let token = std::env::var(&self.api_key_env).ok();
        let reply = post_json(&url, token.as_deref(), &body, self.timeout)?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| TransportError::Protocol("reply has no choices[0].message.content".into()))?;
        let count = |k: &str| reply.pointer(k).and_then(Value::as_u64).unwrap_or(0);
        Ok(ChatReply {
            text: text.to_string(),
            usage: Usage {
                prompt_tokens: count("/usage/prompt_tokens"),
                completion_tokens: count("/usage/completion_tokens"),
            },
        })
    }
}
