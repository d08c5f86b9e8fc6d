//! Black-box generation and embedding services.
//!
//! No module outside this one builds requests or parses responses. Two
//! families of implementations live here: HTTP clients for real services
//! ([`http`]) and deterministic in-process doubles ([`simulated`]).

pub mod http;
pub mod simulated;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vector::EmbeddingVector;

pub use http::{HttpConfig, HttpEmbedder, HttpGenerator};
pub use simulated::{
    ConstantGenerator, DistributionGenerator, Outcome, PrefixEchoGenerator, SimulatedDistribution,
    SimulatedEmbedder,
};

/// Default instruction forwarded to instruction-following embedders.
pub const DEFAULT_EMBED_INSTRUCTION: &str = "Represent the sentence for semantic similarity";

/// Sampling knobs sent with each generation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub params: GenerationParams,
    /// The item pool in the order it was rendered into the prompt, if any.
    pub items: Option<Vec<String>>,
    /// Per-query random stream seed for providers that need randomness.
    pub stream_seed: u64,
    pub max_tokens: u32,
    pub logprobs: bool,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            params: GenerationParams::default(),
            items: None,
            stream_seed: 0,
            max_tokens: 256,
            logprobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Per-token probabilities, present only when the service reported them.
    pub token_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub returns_token_probs: bool,
    pub supports_penalties: bool,
    pub supports_seed: bool,
}

pub trait GenerationProvider: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn generate(&self, request: &GenerationRequest) -> Result<Completion>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Model name and version; used to key cached group vectors.
    fn identity(&self) -> String;

    /// Output dimension, if known before the first request.
    fn dimension(&self) -> Option<usize>;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

impl<T: GenerationProvider + ?Sized> GenerationProvider for &T {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Completion> {
        (**self).generate(request)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for &T {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}

impl<T: GenerationProvider + ?Sized> GenerationProvider for Box<T> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Completion> {
        (**self).generate(request)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}
