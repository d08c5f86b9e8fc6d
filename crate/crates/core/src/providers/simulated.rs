//! Deterministic in-process providers.
//!
//! These stand in for a real model and embedder with a known output
//! distribution, so that sampling, selection and evaluation can be checked
//! against analytic expectations. Randomness comes only from the per-query
//! stream seed carried by each request.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Capabilities, Completion, EmbeddingProvider, GenerationProvider, GenerationRequest};
use crate::error::{RequalError, Result};
use crate::vector::EmbeddingVector;

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub text: String,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl Outcome {
    pub fn new(text: impl Into<String>, probability: f64, embedding: Vec<f64>) -> Result<Self> {
        Ok(Self {
            text: text.into(),
            probability,
            embedding: Some(EmbeddingVector::new(embedding)?),
        })
    }
}

/// A finite output universe with its probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Outcome>", into = "Vec<Outcome>")]
pub struct SimulatedDistribution {
    outcomes: Vec<Outcome>,
}

impl SimulatedDistribution {
    pub fn new(outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(RequalError::InvalidDistribution("no outcomes".into()));
        }
        let mut seen = HashSet::new();
        let mut dim = None;
        for o in &outcomes {
            if !(o.probability > 0.0 && o.probability.is_finite()) {
                return Err(RequalError::InvalidDistribution(format!(
                    "probability of {:?} must be positive, got {}",
                    o.text, o.probability
                )));
            }
            if !seen.insert(o.text.as_str()) {
                return Err(RequalError::InvalidDistribution(format!(
                    "duplicate outcome text {:?}",
                    o.text
                )));
            }
            if let Some(e) = &o.embedding {
                match dim {
                    None => dim = Some(e.dim()),
                    Some(d) if d != e.dim() => {
                        return Err(RequalError::DimensionMismatch {
                            expected: d,
                            found: e.dim(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(RequalError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    /// `sum_i p_i * v_i` over outcomes that carry an embedding.
    pub fn analytic_mean(&self) -> Option<EmbeddingVector> {
        let first = self.outcomes.iter().find_map(|o| o.embedding.as_ref())?;
        let mut acc = vec![0.0; first.dim()];
        for o in &self.outcomes {
            let e = o.embedding.as_ref()?;
            for (a, x) in acc.iter_mut().zip(e.values()) {
                *a += o.probability * x;
            }
        }
        EmbeddingVector::new(acc).ok()
    }

    /// Probabilities re-normalised as `p^(1/T)`.
    fn sharpened(&self, temperature: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .outcomes
            .iter()
            .map(|o| o.probability.powf(1.0 / temperature))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }

    fn pick(&self, probs: impl Iterator<Item = f64>, rng: &mut impl Rng) -> &Outcome {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (o, p) in self.outcomes.iter().zip(probs) {
            cumulative += p;
            if u < cumulative {
                return o;
            }
        }
        // rounding left u above the final cumulative sum
        self.outcomes.last().expect("non-empty")
    }
}

impl TryFrom<Vec<Outcome>> for SimulatedDistribution {
    type Error = RequalError;

    fn try_from(outcomes: Vec<Outcome>) -> Result<Self> {
        Self::new(outcomes)
    }
}

impl From<SimulatedDistribution> for Vec<Outcome> {
    fn from(d: SimulatedDistribution) -> Self {
        d.outcomes
    }
}

/// Draws one outcome text in proportion to its probability.
pub fn simulated_generate(dist: &SimulatedDistribution, rng: &mut impl Rng) -> String {
    dist.pick(dist.outcomes.iter().map(|o| o.probability), rng)
        .text
        .clone()
}

/// Samples from a fixed distribution; ignores sampling parameters unless
/// `temperature_sharpening` is on.
#[derive(Debug, Clone)]
pub struct DistributionGenerator {
    dist: SimulatedDistribution,
    temperature_sharpening: bool,
}

impl DistributionGenerator {
    pub fn new(dist: SimulatedDistribution) -> Self {
        Self {
            dist,
            temperature_sharpening: false,
        }
    }

    pub fn with_temperature_sharpening(mut self, on: bool) -> Self {
        self.temperature_sharpening = on;
        self
    }

    pub fn distribution(&self) -> &SimulatedDistribution {
        &self.dist
    }
}

impl GenerationProvider for DistributionGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            returns_token_probs: false,
            supports_penalties: false,
            supports_seed: true,
        }
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Completion> {
        let mut rng = ChaCha8Rng::seed_from_u64(request.stream_seed);
        let text = if self.temperature_sharpening && request.params.temperature > 0.0 {
            let probs = self.dist.sharpened(request.params.temperature);
            self.dist.pick(probs.into_iter(), &mut rng).text.clone()
        } else {
            simulated_generate(&self.dist, &mut rng)
        };
        Ok(Completion {
            text,
            token_probs: None,
        })
    }
}

/// Returns the first `k` items of the pool in the order they were presented.
/// Models a generator with maximal position bias.
#[derive(Debug, Clone)]
pub struct PrefixEchoGenerator {
    k: usize,
}

impl PrefixEchoGenerator {
    pub fn new(k: usize) -> Self {
        Self { k }
    }
}

impl GenerationProvider for PrefixEchoGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<Completion> {
        let items = request.items.as_deref().ok_or_else(|| {
            RequalError::InvalidTask("prefix-echo generator needs an item pool".into())
        })?;
        let text = items
            .iter()
            .take(self.k)
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(", ");
        Ok(Completion {
            text,
            token_probs: None,
        })
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct ConstantGenerator {
    text: String,
    token_probs: Option<Vec<f64>>,
}

impl ConstantGenerator {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_probs: None,
        }
    }

    pub fn with_token_probs(mut self, probs: Vec<f64>) -> Self {
        self.token_probs = Some(probs);
        self
    }
}

impl GenerationProvider for ConstantGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            returns_token_probs: self.token_probs.is_some(),
            ..Capabilities::default()
        }
    }

    fn generate(&self, _request: &GenerationRequest) -> Result<Completion> {
        Ok(Completion {
            text: self.text.clone(),
            token_probs: self.token_probs.clone(),
        })
    }
}

/// Lookup-table embedder with an optional hashed bag-of-words fallback.
#[derive(Debug)]
pub struct SimulatedEmbedder {
    identity: String,
    dimension: usize,
    lookup: HashMap<String, EmbeddingVector>,
    fallback_hashing: bool,
    texts_embedded: AtomicUsize,
}

impl SimulatedEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            identity: format!("simulated-embedder/d{dimension}"),
            dimension,
            lookup: HashMap::new(),
            fallback_hashing: false,
            texts_embedded: AtomicUsize::new(0),
        }
    }

    /// Embedder that knows every outcome vector of `dist`.
    pub fn for_distribution(dist: &SimulatedDistribution) -> Result<Self> {
        let dim = dist
            .outcomes
            .iter()
            .find_map(|o| o.embedding.as_ref().map(EmbeddingVector::dim))
            .ok_or_else(|| RequalError::InvalidDistribution("no outcome embeddings".into()))?;
        let mut e = Self::new(dim);
        for o in &dist.outcomes {
            if let Some(v) = &o.embedding {
                e.insert(o.text.clone(), v.clone())?;
            }
        }
        Ok(e)
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }

    pub fn with_fallback_hashing(mut self, on: bool) -> Self {
        self.fallback_hashing = on;
        self
    }

    pub fn insert(&mut self, text: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        if v.dim() != self.dimension {
            return Err(RequalError::DimensionMismatch {
                expected: self.dimension,
                found: v.dim(),
            });
        }
        self.lookup.insert(text.into(), v);
        Ok(())
    }

    /// Number of texts embedded so far.
    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::Relaxed)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.lookup.get(text) {
            return Ok(v.clone());
        }
        if !self.fallback_hashing {
            return Err(RequalError::UnknownText(text.to_string()));
        }
        hashed_bag_of_words(text, self.dimension)
    }
}

impl EmbeddingProvider for SimulatedEmbedder {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.texts_embedded.fetch_add(texts.len(), Ordering::Relaxed);
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed token counts of lowercase alphanumeric tokens, unit-normalised.
/// Counts are unsigned so any text with a token has a non-zero vector.
pub fn hashed_bag_of_words(text: &str, dimension: usize) -> Result<EmbeddingVector> {
    if dimension == 0 {
        return Err(RequalError::EmptyVector);
    }
    let mut acc = vec![0.0; dimension];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = fnv1a(token.to_lowercase().as_bytes());
        let slot = (h % dimension as u64) as usize;
        acc[slot] += 1.0;
    }
    EmbeddingVector::new(acc)?.normalized()
}

/// On-disk description of a simulated generator/embedder pair, referenced
/// from run configs as `simulated:PATH`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedSpec {
    pub generation: SimulatedGeneration,
    #[serde(default)]
    pub embedding: SimulatedEmbedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulatedGeneration {
    Distribution {
        outcomes: SimulatedDistribution,
        #[serde(default)]
        temperature_sharpening: bool,
    },
    PrefixEcho {
        k: usize,
    },
    Constant {
        text: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedEmbedding {
    pub dimension: Option<usize>,
    #[serde(default)]
    pub vectors: BTreeMap<String, EmbeddingVector>,
    #[serde(default = "default_true")]
    pub fallback_hashing: bool,
    pub identity: Option<String>,
}

fn default_true() -> bool {
    true
}

impl Default for SimulatedEmbedding {
    fn default() -> Self {
        Self {
            dimension: None,
            vectors: BTreeMap::new(),
            fallback_hashing: true,
            identity: None,
        }
    }
}

const DEFAULT_SIMULATED_DIMENSION: usize = 64;

impl SimulatedSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| RequalError::io(path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| RequalError::json(format!("simulated provider {}", path.display()), e))
    }

    pub fn generator(&self) -> Box<dyn GenerationProvider> {
        match &self.generation {
            SimulatedGeneration::Distribution {
                outcomes,
                temperature_sharpening,
            } => Box::new(
                DistributionGenerator::new(outcomes.clone())
                    .with_temperature_sharpening(*temperature_sharpening),
            ),
            SimulatedGeneration::PrefixEcho { k } => Box::new(PrefixEchoGenerator::new(*k)),
            SimulatedGeneration::Constant { text } => Box::new(ConstantGenerator::new(text)),
        }
    }

    pub fn embedder(&self) -> Result<SimulatedEmbedder> {
        let outcome_vectors: Vec<(&str, &EmbeddingVector)> = match &self.generation {
            SimulatedGeneration::Distribution { outcomes, .. } => outcomes
                .outcomes
                .iter()
                .filter_map(|o| o.embedding.as_ref().map(|e| (o.text.as_str(), e)))
                .collect(),
            _ => Vec::new(),
        };
        let dim = self
            .embedding
            .dimension
            .or_else(|| outcome_vectors.first().map(|(_, e)| e.dim()))
            .or_else(|| self.embedding.vectors.values().next().map(EmbeddingVector::dim))
            .unwrap_or(DEFAULT_SIMULATED_DIMENSION);
        let mut e = SimulatedEmbedder::new(dim).with_fallback_hashing(self.embedding.fallback_hashing);
        if let Some(id) = &self.embedding.identity {
            e = e.with_identity(id.clone());
        }
        for (text, v) in outcome_vectors {
            e.insert(text, v.clone())?;
        }
        for (text, v) in &self.embedding.vectors {
            e.insert(text.clone(), v.clone())?;
        }
        Ok(e)
    }
}
