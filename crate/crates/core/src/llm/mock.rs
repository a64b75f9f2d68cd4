//! In-process transports for offline runs and tests.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;

use super::{ClientConfig, RawResponse, Transport, TransportFailure, WireRequest};

/// Builds a well-formed completion body whose first choice says `content`.
pub fn completion_body(content: &str) -> String {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    })
    .to_string()
}

/// Replays a fixed script of outcomes, then repeats `fallback` forever.
/// Every request it sees is recorded.
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<RawResponse, TransportFailure>>>,
    fallback: Result<RawResponse, TransportFailure>,
    delay: Duration,
    seen: Mutex<Vec<WireRequest>>,
}

impl ScriptedTransport {
    pub fn new(
        script: impl IntoIterator<Item = Result<RawResponse, TransportFailure>>,
        fallback: Result<RawResponse, TransportFailure>,
    ) -> Self {
        ScriptedTransport {
            script: Mutex::new(script.into_iter().collect()),
            fallback,
            delay: Duration::ZERO,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Always answers 200 with `content`.
    pub fn fixed(content: &str) -> Self {
        Self::new([], Ok(RawResponse::new(200, completion_body(content))))
    }

    /// Simulated per-request latency.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn requests(&self) -> Vec<WireRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

#[async_trait]
impl Transport for ScriptedTransport {
    async fn send(&self, request: &WireRequest, _cfg: &ClientConfig) -> Result<RawResponse, TransportFailure> {
        self.seen.lock().unwrap().push(request.clone());
        let next = self.script.lock().unwrap().pop_front();
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        next.unwrap_or_else(|| self.fallback.clone())
    }
}

/// Answers by looking up the content of the final user message. Unknown
/// prompts get a 404. Useful as an identity generator: map each evaluation
/// prompt to its reference report.
pub struct LookupTransport {
    replies: HashMap<String, String>,
    delay: Duration,
}

impl LookupTransport {
    pub fn new(replies: HashMap<String, String>) -> Self {
        LookupTransport { replies, delay: Duration::ZERO }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[async_trait]
impl Transport for LookupTransport {
    async fn send(&self, request: &WireRequest, _cfg: &ClientConfig) -> Result<RawResponse, TransportFailure> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let key = request.messages.last().map(|m| m.content.as_str()).unwrap_or_default();
        Ok(match self.replies.get(key) {
            Some(reply) => RawResponse::new(200, completion_body(reply)),
            None => RawResponse::new(404, "no scripted reply for prompt"),
        })
    }
}
