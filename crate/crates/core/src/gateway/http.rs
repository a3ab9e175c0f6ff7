use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, EmbedBackend};

pub const API_KEY_ENV: &str = "EHR_RAG_API_KEY";
pub const API_BASE_ENV: &str = "EHR_RAG_API_BASE";

const CONTENT_RISK_MARKER: &str = "Content Exists Risk";

fn client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

fn resolve_endpoint(endpoint: Option<String>, path: &str) -> Result<String, BackendError> {
    if let Some(e) = endpoint {
        return Ok(e);
    }
    let base = std::env::var(API_BASE_ENV).map_err(|_| {
        BackendError::Fatal(format!("no endpoint configured and {API_BASE_ENV} unset"))
    })?;
    Ok(format!("{}/{}", base.trim_end_matches('/'), path))
}

fn post(
    client: &Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .map_err(|e| BackendError::Transient(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| BackendError::Transient(e.to_string()))?;
    if text.contains(CONTENT_RISK_MARKER) {
        return Err(BackendError::ContentRisk(CONTENT_RISK_MARKER.to_string()));
    }
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        return Err(BackendError::Transient(format!("http {status}: {text}")));
    }
    if !status.is_success() {
        return Err(BackendError::Fatal(format!("http {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChatBackend {
    client: Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    /// `endpoint` falls back to `$EHR_RAG_API_BASE/chat/completions`; the key
    /// is read from `$EHR_RAG_API_KEY`.
    pub fn new(
        endpoint: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: client(timeout),
            endpoint: resolve_endpoint(endpoint, "chat/completions")?,
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let v = post(&self.client, &self.endpoint, self.api_key.as_deref(), &body)?;
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(BackendError::ContentRisk("content_filter".into()));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedBackend {
    client: Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
}

impl HttpEmbedBackend {
    pub fn new(
        endpoint: Option<String>,
        model: impl Into<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: client(timeout),
            endpoint: resolve_endpoint(endpoint, "embeddings")?,
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            dim,
        })
    }
}

impl EmbedBackend for HttpEmbedBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let body = json!({"model": self.model, "input": text});
        let v = post(&self.client, &self.endpoint, self.api_key.as_deref(), &body)?;
        v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| BackendError::Fatal("response has no data[0].embedding".into()))?
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| BackendError::Fatal("non-numeric embedding".into()))
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
