//! Scripted transports for tests and offline runs.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{ChatReply, ChatRequest, Transport, TransportError, Usage};

/// How replies are matched to calls.
#[derive(Debug, Clone)]
pub enum MockScript {
    /// The n-th call (in arrival order) gets the n-th reply.
    ByIndex(Vec<String>),
    /// Each fingerprint owns a queue; calls without a fingerprint use the
    /// fingerprint of their prompt text.
    ByFingerprint(HashMap<String, Vec<String>>),
}

#[derive(Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum ScriptFile {
    ByIndex { replies: Vec<String> },
    ByFingerprint { replies: HashMap<String, Vec<String>> },
}

impl MockScript {
    /// Reads a JSON script: `{"mode": "by_index", "replies": [...]}` or
    /// `{"mode": "by_fingerprint", "replies": {"<hex>": [...]}}`.
    pub fn load(path: &Path) -> Result<MockScript, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file: ScriptFile =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(match file {
            ScriptFile::ByIndex { replies } => MockScript::ByIndex(replies),
            ScriptFile::ByFingerprint { replies } => MockScript::ByFingerprint(replies),
        })
    }
}

/// What happens when a call finds no scripted reply left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnExhausted {
    /// Panic, failing the surrounding test.
    Panic,
    /// Return a non-retryable transport error.
    Error,
}

#[derive(Debug)]
enum Queues {
    Index(VecDeque<String>),
    Keyed(HashMap<String, VecDeque<String>>),
}

#[derive(Debug)]
pub struct MockTransport {
    queues: Mutex<Queues>,
    log: Mutex<Vec<ChatRequest>>,
    on_exhausted: OnExhausted,
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        let queues = match script {
            MockScript::ByIndex(r) => Queues::Index(r.into()),
            MockScript::ByFingerprint(m) => {
                Queues::Keyed(m.into_iter().map(|(k, v)| (k, v.into())).collect())
            }
        };
        MockTransport {
            queues: Mutex::new(queues),
            log: Mutex::new(Vec::new()),
            on_exhausted: OnExhausted::Panic,
        }
    }

    pub fn by_index<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockScript::ByIndex(replies.into_iter().map(Into::into).collect()))
    }

    pub fn on_exhausted(mut self, mode: OnExhausted) -> Self {
        self.on_exhausted = mode;
        self
    }

    /// Every request received so far, in arrival order.
    pub fn calls(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    /// Replies not yet consumed.
    pub fn remaining(&self) -> usize {
        match &*self.queues.lock().unwrap() {
            Queues::Index(q) => q.len(),
            Queues::Keyed(m) => m.values().map(VecDeque::len).sum(),
        }
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        self.log.lock().unwrap().push(request.clone());
        let (next, key) = {
            let mut queues = self.queues.lock().unwrap();
            match &mut *queues {
                Queues::Index(q) => (q.pop_front(), "call index".to_string()),
                Queues::Keyed(m) => {
                    let key = request
                        .fingerprint
                        .clone()
                        .unwrap_or_else(|| super::fingerprint(&request.operator, &[("prompt", &request.prompt)]));
                    (m.get_mut(&key).and_then(VecDeque::pop_front), key)
                }
            }
        };
        match next {
            Some(text) => Ok(ChatReply {
                text,
                usage: Usage::default(),
            }),
            None => {
                let msg = format!(
                    "mock script exhausted ({} call for {key})",
                    request.operator
                );
                match self.on_exhausted {
                    OnExhausted::Panic => panic!("{msg}"),
                    OnExhausted::Error => Err(TransportError::ScriptExhausted(msg)),
                }
            }
        }
    }
}

/// Transport backed by a closure; handy for synthetic responders that derive
/// a reply from the request.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        (self.0)(request).map(|text| ChatReply {
            text,
            usage: Usage::default(),
        })
    }
}
