//! Chat-completion and text-embedding clients behind named profiles.
//!
//! Every call goes through the same path: cache lookup, in-flight limit,
//! backend call with exponential-backoff retry, atomic cache write. A content
//! refusal from the provider surfaces as [`GatewayError::ContentRisk`] and is
//! never cached or retried; callers pick the fallback.

mod cache;
pub mod doubles;
mod http;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CachePayload, DiskCache};
pub use http::{HttpChatBackend, HttpEmbedBackend, API_BASE_ENV, API_KEY_ENV};

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("content refused: {0}")]
    ContentRisk(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("fatal failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("profile {profile}: content risk refusal: {message}")]
    ContentRisk { profile: String, message: String },
    #[error("profile {profile}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        profile: String,
        attempts: u32,
        message: String,
    },
    #[error("unknown gateway profile {0:?}")]
    UnknownProfile(String),
    #[error("profile {profile}: embedding has dimension {got}, profile declares {expected}")]
    Dimension {
        profile: String,
        expected: usize,
        got: usize,
    },
    #[error("cache error: {0}")]
    Cache(String),
}

impl GatewayError {
    pub fn is_content_risk(&self) -> bool {
        matches!(self, GatewayError::ContentRisk { .. })
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
    fn dim(&self) -> usize;
}

/// Anything that turns text into a raw embedding vector.
pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

impl<T: EmbedBackend> Embedder for T {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        EmbedBackend::embed(self, text).map_err(|e| GatewayError::Transport {
            profile: "<direct>".into(),
            attempts: 1,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub profile: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Hex SHA-256 over the canonical JSON of the whole request.
    pub fn cache_key(&self) -> String {
        hash_json(self)
    }
}

#[derive(Serialize)]
struct EmbedKey<'a> {
    profile: &'a str,
    kind: &'static str,
    text: &'a str,
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("request serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Clone)]
pub struct ChatProfile {
    pub backend: Arc<dyn ChatBackend>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatProfile {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Clone)]
pub struct EmbedProfile {
    pub backend: Arc<dyn EmbedBackend>,
    pub dim: usize,
}

impl EmbedProfile {
    pub fn new(backend: Arc<dyn EmbedBackend>) -> Self {
        let dim = backend.dim();
        Self { backend, dim }
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    chat: HashMap<String, ChatProfile>,
    embed: HashMap<String, EmbedProfile>,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    limiter: Limiter,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Default)]
pub struct GatewayBuilder {
    chat: HashMap<String, ChatProfile>,
    embed: HashMap<String, EmbedProfile>,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    max_in_flight: Option<usize>,
}

impl GatewayBuilder {
    pub fn chat_profile(mut self, name: impl Into<String>, profile: ChatProfile) -> Self {
        self.chat.insert(name.into(), profile);
        self
    }

    pub fn chat_backend(self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat_profile(name, ChatProfile::new(backend))
    }

    pub fn embed_profile(mut self, name: impl Into<String>, profile: EmbedProfile) -> Self {
        self.embed.insert(name.into(), profile);
        self
    }

    pub fn embed_backend(self, name: impl Into<String>, backend: Arc<dyn EmbedBackend>) -> Self {
        self.embed_profile(name, EmbedProfile::new(backend))
    }

    pub fn cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = Some(n);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            chat: self.chat,
            embed: self.embed,
            cache: self.cache,
            retry: self.retry,
            limiter: Limiter::new(self.max_in_flight.unwrap_or(8)),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    /// Number of calls that reached a backend (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn has_chat_profile(&self, name: &str) -> bool {
        self.chat.contains_key(name)
    }

    pub fn has_embed_profile(&self, name: &str) -> bool {
        self.embed.contains_key(name)
    }

    /// Builds a request from the profile's defaults and sends it.
    pub fn complete(&self, profile: &str, prompt: &str) -> Result<GatewayResponse, GatewayError> {
        let p = self
            .chat
            .get(profile)
            .ok_or_else(|| GatewayError::UnknownProfile(profile.to_string()))?;
        self.chat(&ChatRequest {
            profile: profile.to_string(),
            prompt: prompt.to_string(),
            temperature: p.temperature,
            max_tokens: p.max_tokens,
        })
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<GatewayResponse, GatewayError> {
        let start = Instant::now();
        let profile = self
            .chat
            .get(&req.profile)
            .ok_or_else(|| GatewayError::UnknownProfile(req.profile.clone()))?;
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(CachePayload::Text(text)) =
                cache.get(&req.profile, &key)?.map(|e| e.payload)
            {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(GatewayResponse {
                    text,
                    cached: true,
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempt_count: 0,
                });
            }
        }
        let (text, attempts) = self.with_retry(&req.profile, || profile.backend.complete(req))?;
        if let Some(cache) = &self.cache {
            cache.put(&req.profile, &key, CachePayload::Text(text.clone()))?;
        }
        Ok(GatewayResponse {
            text,
            cached: false,
            latency_ms: start.elapsed().as_millis() as u64,
            attempt_count: attempts,
        })
    }

    /// Raw (un-normalized) embedding of `text` under an embedding profile.
    pub fn embed(&self, profile: &str, text: &str) -> Result<Vec<f64>, GatewayError> {
        let p = self
            .embed
            .get(profile)
            .ok_or_else(|| GatewayError::UnknownProfile(profile.to_string()))?;
        let key = hash_json(&EmbedKey {
            profile,
            kind: "embed",
            text,
        });
        let check = |v: Vec<f64>| {
            if v.len() == p.dim {
                Ok(v)
            } else {
                Err(GatewayError::Dimension {
                    profile: profile.to_string(),
                    expected: p.dim,
                    got: v.len(),
                })
            }
        };
        if let Some(cache) = &self.cache {
            if let Some(CachePayload::Vector(v)) = cache.get(profile, &key)?.map(|e| e.payload) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return check(v);
            }
        }
        let (v, _) = self.with_retry(profile, || p.backend.embed(text))?;
        let v = check(v)?;
        if let Some(cache) = &self.cache {
            cache.put(profile, &key, CachePayload::Vector(v.clone()))?;
        }
        Ok(v)
    }

    pub fn embed_dim(&self, profile: &str) -> Result<usize, GatewayError> {
        self.embed
            .get(profile)
            .map(|p| p.dim)
            .ok_or_else(|| GatewayError::UnknownProfile(profile.to_string()))
    }

    pub fn embedder<'a>(&'a self, profile: &'a str) -> ProfileEmbedder<'a> {
        ProfileEmbedder {
            gateway: self,
            profile,
        }
    }

    fn with_retry<T>(
        &self,
        profile: &str,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<(T, u32), GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                call()
            };
            match result {
                Ok(v) => return Ok((v, attempt)),
                Err(BackendError::ContentRisk(message)) => {
                    return Err(GatewayError::ContentRisk {
                        profile: profile.to_string(),
                        message,
                    })
                }
                Err(BackendError::Transient(message)) if attempt < self.retry.max_attempts => {
                    tracing::debug!(profile, attempt, %message, "retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(BackendError::Transient(message)) | Err(BackendError::Fatal(message)) => {
                    return Err(GatewayError::Transport {
                        profile: profile.to_string(),
                        attempts: attempt,
                        message,
                    })
                }
            }
        }
    }
}

/// Borrowed view of one embedding profile.
pub struct ProfileEmbedder<'a> {
    gateway: &'a Gateway,
    profile: &'a str,
}

impl Embedder for ProfileEmbedder<'_> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.gateway.embed(self.profile, text)
    }
}
