//! Chat-completion client for the style-injection step.
//!
//! Requests go through a [`Transport`], so the same retry and parsing logic
//! runs against a real HTTP endpoint or a scripted mock.

mod http;
pub mod mock;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

use crate::prompt::{PromptChain, PromptMessage};

pub use http::HttpTransport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Request { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("invalid client input: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthScheme {
    /// `Authorization: Bearer <key>`
    #[default]
    Bearer,
    /// The key is sent verbatim in the header named by `auth_header`.
    ApiKey,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub auth: AuthScheme,
    pub auth_header: String,
    pub backoff_base_secs: f64,
    pub backoff_factor: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 60.0,
            max_retries: 3,
            api_key_env: "OPENAI_API_KEY".into(),
            auth: AuthScheme::Bearer,
            auth_header: "api-key".into(),
            backoff_base_secs: 1.0,
            backoff_factor: 2.0,
        }
    }
}

impl fmt::Debug for ClientConfig {
    // Only the variable name is ever stored, but keep Debug output explicit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("api_key_env", &self.api_key_env)
            .field("auth", &self.auth)
            .finish_non_exhaustive()
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be non-negative".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        let base_ok = self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0;
        let factor_ok = self.backoff_factor.is_finite() && self.backoff_factor >= 1.0;
        if !base_ok || !factor_ok {
            return Err(LlmError::Config("backoff base must be >= 0 and factor >= 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Nominal delay before retry number `attempt` (0-based), without jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_secs * self.backoff_factor.powi(attempt as i32))
    }
}

/// JSON body of a chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<PromptMessage>,
}

impl WireRequest {
    pub fn new(chain: &PromptChain, cfg: &ClientConfig) -> Self {
        WireRequest {
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
            messages: chain.messages().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Status and body of one HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

impl RawResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        RawResponse { status, body: body.into() }
    }
}

/// Network-level failure: no HTTP status was received.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct TransportFailure(pub String);

#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, request: &WireRequest, cfg: &ClientConfig) -> Result<RawResponse, TransportFailure>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
    pub attempts: u32,
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Extracts the first choice's message content.
pub fn parse_completion(body: &str) -> Result<(String, Usage), LlmError> {
    let resp: WireResponse = serde_json::from_str(body).map_err(|e| LlmError::Protocol(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| LlmError::Protocol("first choice has no content".into()))?;
    Ok((text, resp.usage.unwrap_or_default()))
}

#[derive(Clone)]
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    cfg: ClientConfig,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, cfg: ClientConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(LlmClient { transport, cfg })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    /// Sends one chain, retrying transport failures, 429 and 5xx responses
    /// with jittered exponential backoff.
    pub async fn complete(&self, chain: &PromptChain) -> Result<CompletionResult, LlmError> {
        chain.check().map_err(|e| LlmError::Config(e.to_string()))?;
        let request = WireRequest::new(chain, &self.cfg);
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            tracing::debug!(
                model = %request.model,
                messages = request.messages.len(),
                attempt,
                "sending chat completion"
            );
            let outcome = tokio::time::timeout(self.cfg.timeout(), self.transport.send(&request, &self.cfg))
                .await
                .unwrap_or_else(|_| Err(TransportFailure("request timed out".into())));
            let failure = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let (text, usage) = parse_completion(&resp.body)?;
                    return Ok(CompletionResult { text, usage, latency: started.elapsed(), attempts: attempt });
                }
                Ok(resp) if is_retryable(resp.status) => format!("HTTP {}: {}", resp.status, resp.body),
                Ok(resp) => return Err(LlmError::Request { status: resp.status, body: resp.body }),
                Err(e) => e.0,
            };
            let retries_used = attempt - 1;
            if retries_used >= self.cfg.max_retries {
                return Err(LlmError::Transport { attempts: attempt, message: failure });
            }
            let base = self.cfg.backoff(retries_used);
            let jitter = base.mul_f64(rand::rng().random_range(0.0..0.5));
            tracing::warn!(attempt, delay_ms = (base + jitter).as_millis() as u64, %failure, "retrying");
            tokio::time::sleep(base + jitter).await;
        }
    }

    /// Completes every chain with at most `parallelism` requests in flight.
    /// Results are aligned with the input; failures stay per item.
    pub async fn complete_batch(
        &self,
        chains: &[PromptChain],
        parallelism: usize,
    ) -> Vec<Result<CompletionResult, LlmError>> {
        let parallelism = parallelism.max(1);
        stream::iter(chains.iter().map(|c| self.complete(c)))
            .buffered(parallelism)
            .collect()
            .await
    }
}
