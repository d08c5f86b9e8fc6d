//! End-to-end runs: sample, embed, select, and report. Also the repeated-trial
//! campaign used for evaluation.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::equity::{BiasMode, GroupSet};
use crate::error::{RequalError, Result};
use crate::evalkit::{female_to_male_ratio, Gender, TrialRecord, TrialSeries};
use crate::providers::{EmbeddingProvider, GenerationParams, GenerationProvider};
use crate::sampling::{
    collect_samples, parse_entity_list, SampleCollection, SampleStats, SamplingPlan, TaskSpec,
};
use crate::selection::{select, SelectionResult};
use crate::vector::EmbeddingVector;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything one run produced, before it is flattened into a report.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub collection: SampleCollection,
    pub selection: SelectionResult,
    pub timings: Timings,
}

impl RunOutcome {
    fn text_of(&self, sample_index: usize) -> &str {
        self.collection
            .samples
            .iter()
            .find(|s| s.index == sample_index)
            .map(|s| s.text.as_str())
            .unwrap_or_default()
    }

    /// The equity-aware answer.
    pub fn weighted_text(&self) -> &str {
        self.text_of(self.selection.weighted.sample_index)
    }

    pub fn unweighted_text(&self) -> &str {
        self.text_of(self.selection.unweighted.sample_index)
    }

    pub fn minbias_text(&self) -> &str {
        self.text_of(self.selection.minbias.sample_index)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sampling_ms: f64,
    pub selection_ms: f64,
}

/// Collects samples under `plan` and selects among the valid ones.
pub fn run_once(
    task: &TaskSpec,
    plan: &SamplingPlan,
    groups: &GroupSet,
    mode: BiasMode,
    llm: &dyn GenerationProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<RunOutcome> {
    // Refuse an impossible mode before spending any queries.
    groups.check_mode(mode)?;
    let t0 = Instant::now();
    let collection = collect_samples(task, plan, llm, embedder)?;
    let t1 = Instant::now();
    if let Some(first) = collection.valid_samples().find_map(|s| s.embedding.as_ref()) {
        if first.dim() != groups.dim() {
            return Err(RequalError::DimensionMismatch {
                expected: groups.dim(),
                found: first.dim(),
            });
        }
    }
    let selection = select(&collection.samples, groups, mode)?;
    let timings = Timings {
        sampling_ms: (t1 - t0).as_secs_f64() * 1e3,
        selection_ms: t1.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RunOutcome {
        collection,
        selection,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub text: String,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    pub params: GenerationParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_probability: Option<f64>,
    /// Position among valid samples; absent for invalid ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickedTexts {
    pub weighted: String,
    pub unweighted: String,
    pub minbias: String,
}

/// The JSON document written by a run. Readers ignore fields they do not know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub output: PickedTexts,
    pub selection: SelectionResult,
    pub stats: SampleStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_target_met: Option<bool>,
    pub excluded_invalid: usize,
    pub discarded_in_flight: usize,
    pub samples: Vec<SampleRecord>,
    /// Wall-clock timings, only when requested; they make reports non-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl RunReport {
    pub fn build(
        outcome: &RunOutcome,
        seed: u64,
        config: Option<RunConfig>,
        include_timings: bool,
        include_embeddings: bool,
    ) -> Self {
        let sel = &outcome.selection;
        let br = &sel.bias_report;
        let mut position = 0;
        let samples = outcome
            .collection
            .samples
            .iter()
            .map(|s| {
                let pos = s.valid.then(|| {
                    position += 1;
                    position - 1
                });
                SampleRecord {
                    index: s.index,
                    text: s.text.clone(),
                    valid: s.valid,
                    invalid_reason: s.invalid_reason.clone(),
                    params: s.params,
                    permutation: s.permutation.clone(),
                    sequence_probability: s.sequence_probability,
                    position: pos,
                    beta: pos.map(|p| br.beta[p]),
                    weighting_value: pos.map(|p| br.weighting_values[p]),
                    weight: pos.map(|p| br.weights.as_slice()[p]),
                    reliability: pos.map(|p| sel.reliabilities[p]),
                    embedding: if include_embeddings {
                        s.embedding.clone()
                    } else {
                        None
                    },
                }
            })
            .collect();
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            seed,
            config,
            output: PickedTexts {
                weighted: outcome.weighted_text().to_string(),
                unweighted: outcome.unweighted_text().to_string(),
                minbias: outcome.minbias_text().to_string(),
            },
            selection: sel.clone(),
            stats: outcome.collection.stats.clone(),
            error_target_met: outcome.collection.error_target_met,
            excluded_invalid: outcome.collection.excluded_invalid,
            discarded_in_flight: outcome.collection.discarded_in_flight,
            samples,
            timings: include_timings.then_some(outcome.timings),
        }
    }

    pub fn parse(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| RequalError::json("run report", e))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| RequalError::json("run report", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| RequalError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

/// Female-to-male ratio pooled over every trial's pick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PooledRatios {
    pub weighted: Option<f64>,
    pub unweighted: Option<f64>,
    pub minbias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub trials: usize,
    pub base_seed: u64,
    #[serde(skip)]
    pub series: TrialSeries,
    pub failures: Vec<TrialFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_rfm: Option<PooledRatios>,
}

impl Campaign {
    pub fn failure_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.trials as f64
        }
    }
}

/// Seed of trial `i` in a campaign.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    base_seed ^ trial as u64
}

fn trial_ratio(text: &str, genders: &HashMap<String, Gender>) -> Option<f64> {
    female_to_male_ratio(&[parse_entity_list(text)], genders).ok()
}

/// Runs `trials` independent runs with seeds `base_seed ^ i`. Failed trials
/// are recorded and skipped; configuration errors abort immediately.
#[allow(clippy::too_many_arguments)]
pub fn run_campaign(
    task: &TaskSpec,
    plan: &SamplingPlan,
    groups: &GroupSet,
    mode: BiasMode,
    llm: &dyn GenerationProvider,
    embedder: &dyn EmbeddingProvider,
    trials: usize,
    base_seed: u64,
    genders: Option<&HashMap<String, Gender>>,
) -> Result<Campaign> {
    if trials == 0 {
        return Err(RequalError::InvalidPlan("an evaluation needs at least one trial".into()));
    }
    task.validate()?;
    plan.validate()?;
    groups.check_mode(mode)?;

    let mut series = TrialSeries::new();
    let mut failures = Vec::new();
    let mut picks: [Vec<Vec<String>>; 3] = Default::default();
    for trial in 0..trials {
        let seed = trial_seed(base_seed, trial);
        let trial_plan = SamplingPlan {
            seed,
            ..plan.clone()
        };
        let outcome = match run_once(task, &trial_plan, groups, mode, llm, embedder) {
            Ok(o) => o,
            Err(e) => {
                failures.push(TrialFailure {
                    trial,
                    seed,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let sel = &outcome.selection;
        let texts = [
            outcome.weighted_text(),
            outcome.unweighted_text(),
            outcome.minbias_text(),
        ];
        let rfm = |t: &str| genders.and_then(|g| trial_ratio(t, g));
        series.push(TrialRecord {
            trial,
            seed,
            bias_weighted: sel.weighted.bias,
            bias_unweighted: sel.unweighted.bias,
            bias_minbias: sel.minbias.bias,
            reliability_weighted: sel.weighted.reliability,
            reliability_unweighted: sel.unweighted.reliability,
            reliability_minbias: sel.minbias.reliability,
            rfm_weighted: rfm(texts[0]),
            rfm_unweighted: rfm(texts[1]),
            rfm_minbias: rfm(texts[2]),
        })?;
        for (bucket, text) in picks.iter_mut().zip(texts) {
            bucket.push(parse_entity_list(text));
        }
    }
    let pooled_rfm = genders.map(|g| PooledRatios {
        weighted: female_to_male_ratio(&picks[0], g).ok(),
        unweighted: female_to_male_ratio(&picks[1], g).ok(),
        minbias: female_to_male_ratio(&picks[2], g).ok(),
    });
    Ok(Campaign {
        trials,
        base_seed,
        series,
        failures,
        pooled_rfm,
    })
}
