//! OpenAI-compatible chat-completions client: typed wire format, bounded
//! retries with jittered exponential backoff, and a per-endpoint token
//! bucket. The transport is a trait so retry behavior is testable with a
//! scripted double.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CaseRecord;
use crate::strategy::PromptSpec;
use crate::taxonomy::Layer;

use super::{estimate_tokens, Completion, ModelConfig, ModelError, Provider, TokenUsage};

// --- wire format ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Request body for POST /chat/completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn from_prompt(prompt: &PromptSpec, cfg: &ModelConfig) -> Self {
        Self {
            model: cfg.model_id.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user_text.clone(),
                },
            ],
            temperature: cfg.temperature,
            max_tokens: cfg.max_tokens,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ChatRequest serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<ChatUsage>,
}

impl ChatResponse {
    pub fn parse(body: &str) -> Result<Self, ModelError> {
        serde_json::from_str(body).map_err(|e| ModelError::MalformedResponse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ChatResponse serializes")
    }

    pub fn content(&self) -> Result<&str, ModelError> {
        self.choices
            .first()
            .map(|c| c.message.content.as_str())
            .ok_or_else(|| ModelError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

// --- transport ------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone)]
pub enum TransportError {
    Timeout,
    Other(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("timeout"),
            TransportError::Other(msg) => f.write_str(msg),
        }
    }
}

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ModelError::ConfigInvalid(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .timeout(timeout)
            .body(body.to_string());
        if let Some(token) = bearer {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

// --- rate limiting ---------------------------------------------------------

const BUCKET_CAPACITY: f64 = 4.0;
const BUCKET_REFILL_PER_SEC: f64 = 8.0;

struct TokenBucket {
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    fn new() -> Self {
        Self {
            tokens: BUCKET_CAPACITY,
            last: Instant::now(),
        }
    }

    /// Take one token, returning how long to wait first if empty.
    fn take(&mut self) -> Duration {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * BUCKET_REFILL_PER_SEC)
            .min(BUCKET_CAPACITY);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Duration::ZERO
        } else {
            let wait = (1.0 - self.tokens) / BUCKET_REFILL_PER_SEC;
            self.tokens = 0.0;
            Duration::from_secs_f64(wait)
        }
    }
}

// --- provider ---------------------------------------------------------------

pub struct HttpProvider {
    cfg: ModelConfig,
    endpoint: String,
    api_key: Option<String>,
    transport: Box<dyn HttpTransport>,
    bucket: Mutex<TokenBucket>,
}

impl HttpProvider {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, ModelError> {
        Self::with_transport(cfg, Box::new(ReqwestTransport::new()?))
    }

    pub fn with_transport(
        cfg: &ModelConfig,
        transport: Box<dyn HttpTransport>,
    ) -> Result<Self, ModelError> {
        let endpoint = cfg
            .endpoint_url
            .clone()
            .ok_or_else(|| ModelError::ConfigInvalid("http provider requires endpoint_url".into()))?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ModelError::ConfigInvalid(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            endpoint,
            api_key,
            transport,
            bucket: Mutex::new(TokenBucket::new()),
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.retry.backoff_base_ms as f64;
        let exp = base * 2f64.powi(attempt as i32 - 1);
        let jitter = rand::rng().random_range(0.8..1.2);
        Duration::from_millis((exp * jitter) as u64)
    }

    /// One request with bounded retries on transport errors, 5xx, and 429.
    /// Other 4xx are terminal.
    pub fn request(&self, request: &ChatRequest) -> Result<(ChatResponse, u64, u32), ModelError> {
        let body = request.to_json();
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let mut last = TransportError::Other("no attempt made".into());
        let started = Instant::now();
        for attempt in 1..=self.cfg.retry.max_attempts {
            let wait = self.bucket.lock().expect("bucket lock").take();
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
            match self
                .transport
                .post_json(&self.endpoint, self.api_key.as_deref(), &body, timeout)
            {
                Ok(resp) if resp.status == 200 => {
                    let parsed = ChatResponse::parse(&resp.body)?;
                    parsed.content()?;
                    let latency_ms = started.elapsed().as_millis() as u64;
                    return Ok((parsed, latency_ms, attempt));
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last = TransportError::Other(format!("HTTP {}", resp.status));
                }
                Ok(resp) => {
                    return Err(ModelError::Terminal {
                        status: resp.status,
                        body: resp.body,
                    });
                }
                Err(e) => last = e,
            }
            if attempt < self.cfg.retry.max_attempts {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        match last {
            TransportError::Timeout => Err(ModelError::Timeout {
                attempts: self.cfg.retry.max_attempts,
            }),
            TransportError::Other(msg) => Err(ModelError::Exhausted {
                attempts: self.cfg.retry.max_attempts,
                last: msg,
            }),
        }
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        "http_openai_compatible"
    }

    fn complete(
        &self,
        _case: &CaseRecord,
        prompt: &PromptSpec,
        _layers: &BTreeSet<Layer>,
        _case_seed: u64,
    ) -> Result<Completion, ModelError> {
        let request = ChatRequest::from_prompt(prompt, &self.cfg);
        let (response, latency_ms, attempt_count) = self.request(&request)?;
        let text = response.content()?.to_string();
        let usage = match &response.usage {
            Some(u) => TokenUsage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => TokenUsage {
                input_tokens: estimate_tokens(prompt.system_text.len() + prompt.user_text.len()),
                output_tokens: estimate_tokens(text.len()),
            },
        };
        Ok(Completion {
            text,
            usage,
            latency_ms,
            provider_id: self.id().to_string(),
            attempt_count,
        })
    }
}
