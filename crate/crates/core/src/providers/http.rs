//! HTTP clients for completion and embedding services.
//!
//! Native wire format:
//!
//! ```text
//! POST {endpoint}/v1/completions
//!   {"prompt", "temperature", "frequency_penalty", "presence_penalty", "max_tokens", "logprobs"}
//!   -> {"text": string, "token_logprobs": [number] | null}
//!
//! POST {endpoint}/v1/embeddings
//!   {"input": [string], "instruction": string | null}
//!   -> {"embeddings": [[number]], "dimension": integer, "model": string}
//! ```
//!
//! The `openai` dialect speaks the common `choices[]` / `data[]` variant of
//! the same two endpoints instead.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    Capabilities, Completion, EmbeddingProvider, GenerationProvider, GenerationRequest,
    DEFAULT_EMBED_INSTRUCTION,
};
use crate::error::{RequalError, Result};
use crate::vector::EmbeddingVector;

pub const API_KEY_ENV: &str = "REQUAL_API_KEY";
pub const MAX_EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    #[default]
    Native,
    #[serde(rename = "openai")]
    OpenAi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub dialect: Dialect,
    /// Model name; required by the `openai` dialect, informational otherwise.
    pub model: Option<String>,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub batch_size: usize,
    pub instruction: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            dialect: Dialect::Native,
            model: None,
            api_key: None,
            timeout_ms: 30_000,
            max_attempts: 3,
            backoff_ms: 250,
            batch_size: MAX_EMBED_BATCH,
            instruction: Some(DEFAULT_EMBED_INSTRUCTION.to_string()),
        }
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            ..Self::default()
        }
    }

    /// Picks up the bearer token from `REQUAL_API_KEY` when set.
    pub fn with_env_api_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), path)
    }
}

enum Transient {
    Timeout(String),
    Unavailable(String),
}

struct Transport {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    requests: AtomicUsize,
}

impl Transport {
    fn new(config: HttpConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(RequalError::Config("HTTP provider endpoint is empty".into()));
        }
        if config.max_attempts == 0 {
            return Err(RequalError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| RequalError::Config(format!("HTTP client: {e}")))?;
        Ok(Self {
            config,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T> {
        let url = self.config.url(path);
        let mut last = Transient::Unavailable("no attempt made".into());
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) if e.is_timeout() => {
                    last = Transient::Timeout(format!("{url}: {e}"));
                    continue;
                }
                Err(e) => {
                    last = Transient::Unavailable(format!("{url}: {e}"));
                    continue;
                }
            };
            let status = resp.status();
            if status.is_success() {
                let bytes = match resp.bytes() {
                    Ok(b) => b,
                    Err(e) if e.is_timeout() => {
                        last = Transient::Timeout(format!("{url}: {e}"));
                        continue;
                    }
                    Err(e) => {
                        last = Transient::Unavailable(format!("{url}: {e}"));
                        continue;
                    }
                };
                return serde_json::from_slice(&bytes)
                    .map_err(|e| RequalError::MalformedResponse(format!("{url}: {e}")));
            }
            let code = status.as_u16();
            let text = resp.text().unwrap_or_default();
            if code == 429 || status.is_server_error() {
                last = Transient::Unavailable(format!("{url}: HTTP {code}"));
                continue;
            }
            return Err(RequalError::HttpStatus { code, body: text });
        }
        let attempts = self.config.max_attempts;
        Err(match last {
            Transient::Timeout(msg) => RequalError::Timeout(format!("{msg} ({attempts} attempts)")),
            Transient::Unavailable(msg) => {
                RequalError::ProviderUnavailable(format!("{msg} ({attempts} attempts)"))
            }
        })
    }
}

fn logprobs_to_probs(logprobs: Vec<f64>) -> Result<Vec<f64>> {
    logprobs
        .into_iter()
        .map(|lp| {
            if lp.is_finite() && lp <= 0.0 {
                Ok(lp.exp())
            } else {
                Err(RequalError::MalformedResponse(format!(
                    "token logprob {lp} is not a finite non-positive number"
                )))
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct NativeCompletion {
    text: String,
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct OpenAiCompletion {
    choices: Vec<OpenAiChoice>,
}

#[derive(Deserialize)]
struct OpenAiChoice {
    text: String,
    #[serde(default)]
    logprobs: Option<OpenAiLogprobs>,
}

#[derive(Deserialize)]
struct OpenAiLogprobs {
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

pub struct HttpGenerator {
    transport: Transport,
}

impl HttpGenerator {
    pub fn new(config: HttpConfig) -> Result<Self> {
        Ok(Self {
            transport: Transport::new(config)?,
        })
    }

    /// HTTP requests issued, retries included.
    pub fn requests_sent(&self) -> usize {
        self.transport.requests.load(Ordering::Relaxed)
    }
}

impl GenerationProvider for HttpGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            returns_token_probs: true,
            supports_penalties: true,
            supports_seed: false,
        }
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Completion> {
        let p = &request.params;
        let mut body = json!({
            "prompt": request.prompt,
            "temperature": p.temperature,
            "frequency_penalty": p.frequency_penalty,
            "presence_penalty": p.presence_penalty,
            "max_tokens": request.max_tokens,
            "logprobs": request.logprobs,
        });
        let (text, logprobs) = match self.transport.config.dialect {
            Dialect::Native => {
                let r: NativeCompletion = self.transport.post("/v1/completions", &body)?;
                (r.text, r.token_logprobs)
            }
            Dialect::OpenAi => {
                body["model"] = json!(self.transport.config.model);
                // the OpenAI dialect takes a count of alternatives, not a flag
                body["logprobs"] = if request.logprobs { json!(1) } else { json!(null) };
                let r: OpenAiCompletion = self.transport.post("/v1/completions", &body)?;
                let choice = r.choices.into_iter().next().ok_or_else(|| {
                    RequalError::MalformedResponse("completion response has no choices".into())
                })?;
                (choice.text, choice.logprobs.and_then(|l| l.token_logprobs))
            }
        };
        let token_probs = logprobs.map(logprobs_to_probs).transpose()?;
        Ok(Completion { text, token_probs })
    }
}

#[derive(Deserialize)]
struct NativeEmbeddings {
    embeddings: Vec<Vec<f64>>,
    dimension: usize,
    #[allow(dead_code)]
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct OpenAiEmbeddings {
    data: Vec<OpenAiEmbedding>,
}

#[derive(Deserialize)]
struct OpenAiEmbedding {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    transport: Transport,
    dimension: Mutex<Option<usize>>,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.batch_size == 0 || config.batch_size > MAX_EMBED_BATCH {
            return Err(RequalError::Config(format!(
                "embedding batch size must be in 1..={MAX_EMBED_BATCH}"
            )));
        }
        Ok(Self {
            transport: Transport::new(config)?,
            dimension: Mutex::new(None),
        })
    }

    pub fn requests_sent(&self) -> usize {
        self.transport.requests.load(Ordering::Relaxed)
    }

    fn embed_chunk(&self, chunk: &[String]) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.transport.config;
        let vectors = match cfg.dialect {
            Dialect::Native => {
                let body = json!({ "input": chunk, "instruction": cfg.instruction });
                let r: NativeEmbeddings = self.transport.post("/v1/embeddings", &body)?;
                if let Some(bad) = r.embeddings.iter().find(|v| v.len() != r.dimension) {
                    return Err(RequalError::MalformedResponse(format!(
                        "declared dimension {} but received a vector of length {}",
                        r.dimension,
                        bad.len()
                    )));
                }
                r.embeddings
            }
            Dialect::OpenAi => {
                let body = json!({ "input": chunk, "model": cfg.model });
                let r: OpenAiEmbeddings = self.transport.post("/v1/embeddings", &body)?;
                r.data.into_iter().map(|d| d.embedding).collect()
            }
        };
        if vectors.len() != chunk.len() {
            return Err(RequalError::MalformedResponse(format!(
                "sent {} inputs, received {} embeddings",
                chunk.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }

    fn check_dimension(&self, found: usize) -> Result<()> {
        let mut known = self.dimension.lock().expect("dimension lock poisoned");
        match *known {
            None => {
                *known = Some(found);
                Ok(())
            }
            Some(expected) if expected != found => {
                Err(RequalError::DimensionMismatch { expected, found })
            }
            Some(_) => Ok(()),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn identity(&self) -> String {
        let cfg = &self.transport.config;
        format!(
            "{}|{}|{}",
            cfg.endpoint.trim_end_matches('/'),
            cfg.model.as_deref().unwrap_or("default"),
            cfg.instruction.as_deref().unwrap_or("")
        )
    }

    fn dimension(&self) -> Option<usize> {
        *self.dimension.lock().expect("dimension lock poisoned")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.transport.config.batch_size) {
            for raw in self.embed_chunk(chunk)? {
                self.check_dimension(raw.len())?;
                let v = EmbeddingVector::new(raw)
                    .map_err(|e| RequalError::MalformedResponse(e.to_string()))?;
                if v.norm() == 0.0 {
                    return Err(RequalError::ZeroNormVector);
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}
