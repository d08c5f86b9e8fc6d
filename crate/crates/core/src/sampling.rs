//! Repeated querying of the generator.
//!
//! Each query gets its own random stream derived from the run seed and the
//! query index, so the item order, sampling parameters and simulated draws
//! of query `i` are fixed no matter how many queries run concurrently.
//! Sample count is either fixed up front from a budget (`floor(B / c)`) or
//! grown until the CLT confidence error of the centroid drops below a target.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RequalError, Result};
use crate::providers::{
    Completion, EmbeddingProvider, GenerationParams, GenerationProvider, GenerationRequest,
};
use crate::vector::{per_dim_std, EmbeddingVector};

pub const TEMPERATURE_RANGE: (f64, f64) = (0.5, 1.0);
pub const PENALTY_RANGE: (f64, f64) = (0.5, 2.0);

/// Retries allowed for invalid outputs, as a multiple of the sample target.
const RETRY_FACTOR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SubsetSelection,
    MaskedPrediction,
    ChatCompletion,
    #[default]
    Freeform,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Validator {
    #[default]
    None,
    NonEmpty,
    /// Every entity named in the output must come from the item pool.
    SubsetOfPool,
    /// The output must supply a non-empty filler and not echo the mask token.
    MaskedTokenPresent {
        #[serde(default = "default_mask_token")]
        mask_token: String,
    },
}

fn default_mask_token() -> String {
    "<masked>".to_string()
}

pub const ITEMS_PLACEHOLDER: &str = "{items}";

/// A prompt template plus an optional pool of interchangeable items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
    #[serde(default)]
    pub validator: Validator,
    #[serde(default)]
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn freeform(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            items: None,
            validator: Validator::None,
            kind: TaskKind::Freeform,
        }
    }

    pub fn subset_selection(template: impl Into<String>, items: Vec<String>) -> Self {
        Self {
            template: template.into(),
            items: Some(items),
            validator: Validator::SubsetOfPool,
            kind: TaskKind::SubsetSelection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let has_placeholder = self.template.contains(ITEMS_PLACEHOLDER);
        let pool_empty = self.items.as_ref().is_none_or(Vec::is_empty);
        if has_placeholder && pool_empty {
            return Err(RequalError::InvalidTask(
                "template uses {items} but the item pool is empty".into(),
            ));
        }
        match (&self.validator, self.kind) {
            (Validator::SubsetOfPool, TaskKind::SubsetSelection) if pool_empty => Err(
                RequalError::InvalidTask("subset_of_pool validation needs an item pool".into()),
            ),
            (Validator::SubsetOfPool, TaskKind::SubsetSelection) => Ok(()),
            (Validator::SubsetOfPool, kind) => Err(RequalError::InvalidTask(format!(
                "subset_of_pool validation does not apply to {kind:?} tasks"
            ))),
            (Validator::MaskedTokenPresent { .. }, TaskKind::MaskedPrediction) => Ok(()),
            (Validator::MaskedTokenPresent { .. }, kind) => Err(RequalError::InvalidTask(
                format!("masked_token_present validation does not apply to {kind:?} tasks"),
            )),
            _ => Ok(()),
        }
    }

    /// Substitutes the numbered item list for `{items}`.
    pub fn render(&self, items: &[String]) -> String {
        if !self.template.contains(ITEMS_PLACEHOLDER) {
            return self.template.clone();
        }
        let listing = items
            .iter()
            .enumerate()
            .map(|(i, item)| format!("{}. {}", i + 1, item))
            .collect::<Vec<_>>()
            .join(", ");
        self.template.replace(ITEMS_PLACEHOLDER, &listing)
    }

    /// `Err(reason)` when `text` fails the task's validator.
    pub fn check_output(&self, text: &str) -> std::result::Result<(), String> {
        match &self.validator {
            Validator::None => Ok(()),
            Validator::NonEmpty => {
                if text.trim().is_empty() {
                    Err("empty output".into())
                } else {
                    Ok(())
                }
            }
            Validator::SubsetOfPool => {
                let pool = self.items.as_deref().unwrap_or_default();
                let named = parse_entity_list(text);
                if named.is_empty() {
                    return Err("output names no entities".into());
                }
                match named.iter().find(|n| !pool.iter().any(|p| p == *n)) {
                    Some(stranger) => Err(format!("`{stranger}` is not in the item pool")),
                    None => Ok(()),
                }
            }
            Validator::MaskedTokenPresent { mask_token } => {
                let t = text.trim();
                if t.is_empty() {
                    Err("empty prediction".into())
                } else if t.contains(mask_token.as_str()) {
                    Err(format!("prediction still contains {mask_token}"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Splits a list-shaped answer ("1. Kelli, 2. Grant\n3. Devon.") into names.
pub fn parse_entity_list(text: &str) -> Vec<String> {
    text.split([',', '\n', ';'])
        .map(|part| {
            let part = part.trim();
            let part = part.trim_start_matches(['-', '*', '•']);
            let part = part.trim_start();
            // leading enumeration such as "3." or "3)"
            let digits = part.chars().take_while(char::is_ascii_digit).count();
            let part = if digits > 0 && part[digits..].starts_with(['.', ')']) {
                &part[digits + 1..]
            } else {
                part
            };
            part.trim().trim_end_matches('.').trim().to_string()
        })
        .filter(|p| !p.is_empty())
        .collect()
}

/// How the per-dimension confidence error is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReduction {
    /// Euclidean norm of the per-dimension standard errors.
    #[default]
    L2,
    /// Largest per-dimension standard error.
    MaxDimension,
}

fn default_confidence() -> f64 {
    0.95
}
fn default_warmup() -> usize {
    5
}
fn default_max_samples() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlanMode {
    FixedBudget {
        budget: f64,
        cost: f64,
    },
    FixedError {
        /// Confidence level, e.g. 0.95.
        #[serde(default = "default_confidence")]
        confidence: f64,
        target_error: f64,
        #[serde(default = "default_warmup")]
        warmup: usize,
        #[serde(default = "default_max_samples")]
        max_samples: usize,
        #[serde(default)]
        reduction: ErrorReduction,
    },
}

fn default_true() -> bool {
    true
}
fn default_parallelism() -> usize {
    1
}
fn default_max_tokens() -> u32 {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(flatten)]
    pub mode: PlanMode,
    pub seed: u64,
    /// Queries in flight at once. Has no effect on results, so it is left
    /// out of serialized plans.
    #[serde(default = "default_parallelism", skip_serializing)]
    pub parallelism: usize,
    /// Reshuffle the item pool for every query.
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Draw temperature and penalties per query; otherwise use `params`.
    #[serde(default = "default_true")]
    pub randomize_params: bool,
    #[serde(default)]
    pub params: GenerationParams,
    /// Fail on the first invalid output instead of replacing it.
    #[serde(default)]
    pub strict_validation: bool,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub logprobs: bool,
}

impl SamplingPlan {
    pub fn fixed_budget(budget: f64, cost: f64, seed: u64) -> Self {
        Self::with_mode(PlanMode::FixedBudget { budget, cost }, seed)
    }

    pub fn fixed_count(m: usize, seed: u64) -> Self {
        Self::fixed_budget(m as f64, 1.0, seed)
    }

    pub fn fixed_error(confidence: f64, target_error: f64, seed: u64) -> Self {
        Self::with_mode(
            PlanMode::FixedError {
                confidence,
                target_error,
                warmup: default_warmup(),
                max_samples: default_max_samples(),
                reduction: ErrorReduction::L2,
            },
            seed,
        )
    }

    fn with_mode(mode: PlanMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            parallelism: 1,
            shuffle: true,
            randomize_params: true,
            params: GenerationParams::default(),
            strict_validation: false,
            max_tokens: default_max_tokens(),
            logprobs: false,
        }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn with_warmup_and_cap(mut self, warmup_m: usize, cap: usize) -> Self {
        if let PlanMode::FixedError {
            warmup,
            max_samples,
            ..
        } = &mut self.mode
        {
            *warmup = warmup_m;
            *max_samples = cap;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(RequalError::InvalidPlan("parallelism must be positive".into()));
        }
        match self.mode {
            PlanMode::FixedBudget { .. } => {
                plan_sample_count(self)?;
            }
            PlanMode::FixedError {
                confidence,
                target_error,
                warmup,
                max_samples,
                ..
            } => {
                if !(confidence > 0.0 && confidence < 1.0) {
                    return Err(RequalError::InvalidPlan(format!(
                        "confidence {confidence} outside (0, 1)"
                    )));
                }
                if !(target_error > 0.0 && target_error.is_finite()) {
                    return Err(RequalError::InvalidPlan(format!(
                        "target error {target_error} must be positive"
                    )));
                }
                if warmup < 2 {
                    return Err(RequalError::InvalidPlan("warm-up needs at least 2 samples".into()));
                }
                if warmup > max_samples {
                    return Err(RequalError::InvalidPlan(format!(
                        "warm-up {warmup} exceeds the sample cap {max_samples}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `floor(budget / cost)` for a fixed-budget plan.
pub fn plan_sample_count(plan: &SamplingPlan) -> Result<usize> {
    match plan.mode {
        PlanMode::FixedBudget { budget, cost } => {
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(RequalError::InvalidPlan(format!("query cost {cost} must be positive")));
            }
            if !(budget >= 0.0 && budget.is_finite()) {
                return Err(RequalError::InvalidPlan(format!("budget {budget} must be non-negative")));
            }
            if budget < cost {
                return Err(RequalError::BudgetBelowSingleQuery { budget, cost });
            }
            Ok((budget / cost).floor() as usize)
        }
        PlanMode::FixedError { .. } => Err(RequalError::InvalidPlan(
            "sample count is only fixed up front in fixed_budget mode".into(),
        )),
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RequalError::OutOfDomain(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    Ok(x)
}

/// `Z((1 + confidence) / 2) * reduce(sigma) / sqrt(m)`.
pub fn confidence_error(
    sigma: &EmbeddingVector,
    m: usize,
    confidence: f64,
    reduction: ErrorReduction,
) -> Result<f64> {
    if m < 2 {
        return Err(RequalError::InsufficientSamples { needed: 2, got: m });
    }
    let z = normal_quantile(0.5 + confidence / 2.0)?;
    let spread = match reduction {
        ErrorReduction::L2 => sigma.norm(),
        ErrorReduction::MaxDimension => sigma.values().iter().copied().fold(0.0, f64::max),
    };
    Ok(z * spread / (m as f64).sqrt())
}

/// Uniform random permutation (Fisher-Yates).
pub fn shuffle_items<T: Clone>(items: &[T], rng: &mut impl Rng) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(rng);
    out
}

/// Temperature from U[0.5, 1], frequency and presence penalties from U[0.5, 2].
pub fn draw_generation_params(rng: &mut impl Rng) -> GenerationParams {
    GenerationParams {
        temperature: rng.random_range(TEMPERATURE_RANGE.0..=TEMPERATURE_RANGE.1),
        frequency_penalty: rng.random_range(PENALTY_RANGE.0..=PENALTY_RANGE.1),
        presence_penalty: rng.random_range(PENALTY_RANGE.0..=PENALTY_RANGE.1),
    }
}

/// Product of per-token probabilities, accumulated in log space.
pub fn sequence_probability(token_probs: &[f64]) -> Result<f64> {
    let mut log_sum = 0.0;
    for &p in token_probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(RequalError::InvalidTokenProbability(p));
        }
        log_sum += p.ln();
    }
    Ok(log_sum.exp())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent random stream for query `index` of a run seeded with `seed`.
pub fn query_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    /// Issue order within the run.
    pub index: usize,
    pub text: String,
    /// Absent for invalid samples, which are never embedded.
    pub embedding: Option<EmbeddingVector>,
    pub params: GenerationParams,
    pub permutation: Option<Vec<String>>,
    pub token_probs: Option<Vec<f64>>,
    pub sequence_probability: Option<f64>,
    pub valid: bool,
    pub invalid_reason: Option<String>,
}

impl OutputSample {
    /// A valid sample with a known embedding and default metadata.
    pub fn from_embedding(index: usize, text: impl Into<String>, embedding: EmbeddingVector) -> Self {
        Self {
            index,
            text: text.into(),
            embedding: Some(embedding),
            params: GenerationParams::default(),
            permutation: None,
            token_probs: None,
            sequence_probability: None,
            valid: true,
            invalid_reason: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Valid samples.
    pub m: usize,
    pub sigma: Option<EmbeddingVector>,
    pub confidence_error: Option<f64>,
    pub confidence: f64,
    pub reduction: ErrorReduction,
}

impl SampleStats {
    pub fn compute(
        embeddings: &[EmbeddingVector],
        confidence: f64,
        reduction: ErrorReduction,
    ) -> Result<Self> {
        let m = embeddings.len();
        let (sigma, confidence_error) = if m >= 2 {
            let sigma = per_dim_std(embeddings)?;
            let e = confidence_error(&sigma, m, confidence, reduction)?;
            (Some(sigma), Some(e))
        } else {
            (None, None)
        };
        Ok(Self {
            m,
            sigma,
            confidence_error,
            confidence,
            reduction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCollection {
    /// Every sample kept, valid or not, in issue order.
    pub samples: Vec<OutputSample>,
    pub stats: SampleStats,
    /// Fixed-error runs only: whether the target was reached before the cap.
    pub error_target_met: Option<bool>,
    pub excluded_invalid: usize,
    /// Completed queries past the stopping point of a fixed-error batch.
    pub discarded_in_flight: usize,
}

impl SampleCollection {
    pub fn valid_samples(&self) -> impl Iterator<Item = &OutputSample> {
        self.samples.iter().filter(|s| s.valid)
    }
}

struct Issued {
    index: usize,
    params: GenerationParams,
    permutation: Option<Vec<String>>,
    completion: Completion,
}

fn issue_query(
    index: usize,
    task: &TaskSpec,
    plan: &SamplingPlan,
    llm: &dyn GenerationProvider,
) -> Result<Issued> {
    let mut rng = query_rng(plan.seed, index);
    let permutation = task.items.as_ref().map(|items| {
        if plan.shuffle {
            shuffle_items(items, &mut rng)
        } else {
            items.clone()
        }
    });
    let drawn = draw_generation_params(&mut rng);
    let params = if plan.randomize_params { drawn } else { plan.params };
    let stream_seed = rng.next_u64();
    let prompt = task.render(permutation.as_deref().unwrap_or_default());
    let request = GenerationRequest {
        prompt,
        params,
        items: permutation.clone(),
        stream_seed,
        max_tokens: plan.max_tokens,
        logprobs: plan.logprobs,
    };
    let completion = llm.generate(&request)?;
    Ok(Issued {
        index,
        params,
        permutation,
        completion,
    })
}

fn issue_batch(
    start: usize,
    len: usize,
    task: &TaskSpec,
    plan: &SamplingPlan,
    llm: &dyn GenerationProvider,
) -> Result<Vec<Issued>> {
    if len == 1 || plan.parallelism == 1 {
        return (start..start + len)
            .map(|i| issue_query(i, task, plan, llm))
            .collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (start..start + len)
            .map(|i| scope.spawn(move || issue_query(i, task, plan, llm)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("query thread panicked"))
            .collect()
    })
}

/// Embeds `texts` once each, reusing vectors already seen this run.
fn embed_texts(
    texts: &[&str],
    memo: &mut HashMap<String, EmbeddingVector>,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>> {
    let mut fresh: Vec<String> = Vec::new();
    for t in texts {
        if !memo.contains_key(*t) && !fresh.iter().any(|f| f == t) {
            fresh.push(t.to_string());
        }
    }
    if !fresh.is_empty() {
        let vectors = embedder.embed(&fresh)?;
        if vectors.len() != fresh.len() {
            return Err(RequalError::MalformedResponse(format!(
                "embedder returned {} vectors for {} texts",
                vectors.len(),
                fresh.len()
            )));
        }
        memo.extend(fresh.into_iter().zip(vectors));
    }
    let out: Vec<EmbeddingVector> = texts.iter().map(|t| memo[*t].clone()).collect();
    if let Some(first) = memo.values().next() {
        let dim = first.dim();
        if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
            return Err(RequalError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
    }
    Ok(out)
}

/// Issues queries, validates and embeds outputs, and stops according to
/// the plan.
///
/// Queries run in batches of up to `plan.parallelism`; results are consumed
/// strictly in index order and the stopping rule is evaluated after each
/// consumed valid sample, so the outcome is identical for any parallelism.
pub fn collect_samples(
    task: &TaskSpec,
    plan: &SamplingPlan,
    llm: &dyn GenerationProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<SampleCollection> {
    task.validate()?;
    plan.validate()?;

    let (target, stop_rule) = match plan.mode {
        PlanMode::FixedBudget { .. } => (plan_sample_count(plan)?, None),
        PlanMode::FixedError {
            confidence,
            target_error,
            warmup,
            max_samples,
            reduction,
        } => (
            max_samples,
            Some((confidence, target_error, warmup, reduction)),
        ),
    };
    let max_issued = target * (1 + RETRY_FACTOR);

    let mut memo = HashMap::new();
    let mut samples = Vec::new();
    let mut valid_vectors: Vec<EmbeddingVector> = Vec::new();
    let mut issued = 0usize;
    let mut excluded_invalid = 0usize;
    let mut discarded_in_flight = 0usize;
    let mut target_met = false;

    'outer: while valid_vectors.len() < target {
        if issued >= max_issued {
            return Err(RequalError::RetryExhausted {
                issued,
                valid: valid_vectors.len(),
                needed: stop_rule.map_or(target, |(_, _, warmup, _)| warmup),
            });
        }
        let batch_len = plan
            .parallelism
            .min(target - valid_vectors.len())
            .min(max_issued - issued);
        let batch = issue_batch(issued, batch_len, task, plan, llm)?;
        issued += batch_len;

        let verdicts: Vec<std::result::Result<(), String>> = batch
            .iter()
            .map(|q| task.check_output(&q.completion.text))
            .collect();
        let valid_texts: Vec<&str> = batch
            .iter()
            .zip(&verdicts)
            .filter(|(_, v)| v.is_ok())
            .map(|(q, _)| q.completion.text.as_str())
            .collect();
        let mut vectors = embed_texts(&valid_texts, &mut memo, embedder)?.into_iter();

        let batch_size = batch.len();
        for (pos, (q, verdict)) in batch.into_iter().zip(verdicts).enumerate() {
            let sequence_probability = q
                .completion
                .token_probs
                .as_deref()
                .map(sequence_probability)
                .transpose()?;
            let (valid, invalid_reason, embedding) = match verdict {
                Ok(()) => (true, None, vectors.next()),
                Err(reason) => {
                    if plan.strict_validation {
                        return Err(RequalError::InvalidOutput {
                            index: q.index,
                            reason,
                        });
                    }
                    excluded_invalid += 1;
                    (false, Some(reason), None)
                }
            };
            if let Some(v) = &embedding {
                valid_vectors.push(v.clone());
            }
            samples.push(OutputSample {
                index: q.index,
                text: q.completion.text,
                embedding,
                params: q.params,
                permutation: q.permutation,
                token_probs: q.completion.token_probs,
                sequence_probability,
                valid,
                invalid_reason,
            });
            if let (true, Some((confidence, target_error, warmup, reduction))) = (valid, stop_rule)
            {
                let m = valid_vectors.len();
                if m >= warmup {
                    let sigma = per_dim_std(&valid_vectors)?;
                    let e = confidence_error(&sigma, m, confidence, reduction)?;
                    if e <= target_error {
                        target_met = true;
                        discarded_in_flight = batch_size - pos - 1;
                        break 'outer;
                    }
                }
            }
        }
    }

    let (confidence, reduction) = match stop_rule {
        Some((confidence, _, _, reduction)) => (confidence, reduction),
        None => (default_confidence(), ErrorReduction::L2),
    };
    let stats = SampleStats::compute(&valid_vectors, confidence, reduction)?;
    Ok(SampleCollection {
        samples,
        stats,
        error_target_met: stop_rule.map(|_| target_met),
        excluded_invalid,
        discarded_in_flight,
    })
}
