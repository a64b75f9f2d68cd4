use async_trait::async_trait;

use super::{AuthScheme, ClientConfig, RawResponse, Transport, TransportFailure, WireRequest};

/// POSTs JSON requests to `cfg.endpoint`. The API key is read from the
/// configured environment variable on every request and never logged.
#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        HttpTransport { client: reqwest::Client::new() }
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn send(&self, request: &WireRequest, cfg: &ClientConfig) -> Result<RawResponse, TransportFailure> {
        let body = serde_json::to_string(request).map_err(|e| TransportFailure(e.to_string()))?;
        tracing::debug!(endpoint = %cfg.endpoint, body = %body, "POST chat completion");

        let mut req = self
            .client
            .post(&cfg.endpoint)
            .timeout(cfg.timeout())
            .header("Content-Type", "application/json")
            .body(body);
        match std::env::var(&cfg.api_key_env) {
            Ok(key) => {
                req = match cfg.auth {
                    AuthScheme::Bearer => req.header("Authorization", format!("Bearer {key}")),
                    AuthScheme::ApiKey => req.header(cfg.auth_header.as_str(), key),
                };
            }
            Err(_) => tracing::warn!(var = %cfg.api_key_env, "API key variable not set; sending without credentials"),
        }

        let resp = req.send().await.map_err(|e| TransportFailure(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().await.map_err(|e| TransportFailure(e.to_string()))?;
        tracing::debug!(status, "chat completion response");
        Ok(RawResponse { status, body })
    }
}
