//! Evaluation metrics: female-to-male ratio of selected subsets, stereotype
//! classification of masked-word predictions, Jaccard order sensitivity, and
//! per-trial bias/reliability series with CSV and summary export.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{RequalError, Result};
use crate::providers::{EmbeddingProvider, GenerationProvider};
use crate::sampling::{collect_samples, parse_entity_list, SamplingPlan, TaskKind, TaskSpec};

pub const DEFAULT_LEXICON: &str = include_str!("../data/gender_lexicon.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Accepts the usual spellings found in dataset gender columns.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_lowercase().as_str() {
            "f" | "female" | "woman" | "w" => Some(Gender::Female),
            "m" | "male" | "man" => Some(Gender::Male),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderLexicon {
    pub male: Vec<String>,
    pub female: Vec<String>,
    #[serde(default)]
    pub neutral: Vec<String>,
}

impl GenderLexicon {
    pub fn parse(raw: &str) -> Result<Self> {
        let lex: Self = serde_json::from_str(raw).map_err(|e| RequalError::json("lexicon", e))?;
        lex.normalized()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| RequalError::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    /// Lowercases every term and checks the sets are disjoint.
    pub fn normalized(self) -> Result<Self> {
        let lower = |xs: Vec<String>| -> Vec<String> {
            xs.into_iter()
                .map(|t| t.trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect()
        };
        let lex = Self {
            male: lower(self.male),
            female: lower(self.female),
            neutral: lower(self.neutral),
        };
        if lex.male.is_empty() || lex.female.is_empty() {
            return Err(RequalError::InvalidLexicon(
                "male and female term lists must be non-empty".into(),
            ));
        }
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (set, terms) in [("male", &lex.male), ("female", &lex.female), ("neutral", &lex.neutral)] {
            for t in terms.iter() {
                if let Some(other) = seen.insert(t.as_str(), set) {
                    if other != set {
                        return Err(RequalError::InvalidLexicon(format!(
                            "`{t}` appears in both {other} and {set}"
                        )));
                    }
                }
            }
        }
        Ok(lex)
    }

    fn terms(&self) -> impl Iterator<Item = (&str, Option<Gender>)> {
        self.male
            .iter()
            .map(|t| (t.as_str(), Some(Gender::Male)))
            .chain(self.female.iter().map(|t| (t.as_str(), Some(Gender::Female))))
            .chain(self.neutral.iter().map(|t| (t.as_str(), None)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StereotypeLabel {
    Pro,
    Anti,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub label: StereotypeLabel,
    /// The lexicon term that decided the label; `None` means no term matched.
    pub matched: Option<String>,
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

/// Byte offset of the first whole-word occurrence of `term` in `text`.
fn find_word(text: &str, term: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = text[from..].find(term) {
        let start = from + rel;
        let end = start + term.len();
        let before = text[..start].chars().next_back();
        let after = text[end..].chars().next();
        if !is_word_char(before) && !is_word_char(after) {
            return Some(start);
        }
        from = start + text[start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Labels a prediction by the first gendered or neutral lexicon term it contains.
pub fn classify_stereotype_detailed(
    predicted: &str,
    expected_stereotype: Gender,
    lexicon: &GenderLexicon,
) -> Classification {
    let text = predicted.to_lowercase();
    let mut best: Option<(usize, usize, &str, Option<Gender>)> = None;
    for (term, gender) in lexicon.terms() {
        if let Some(pos) = find_word(&text, term) {
            let better = match best {
                None => true,
                // earliest hit wins; a longer phrase wins a tie
                Some((bpos, blen, _, _)) => pos < bpos || (pos == bpos && term.len() > blen),
            };
            if better {
                best = Some((pos, term.len(), term, gender));
            }
        }
    }
    match best {
        None => Classification {
            label: StereotypeLabel::Neutral,
            matched: None,
        },
        Some((_, _, term, gender)) => Classification {
            label: match gender {
                Some(g) if g == expected_stereotype => StereotypeLabel::Pro,
                Some(_) => StereotypeLabel::Anti,
                None => StereotypeLabel::Neutral,
            },
            matched: Some(term.to_string()),
        },
    }
}

pub fn classify_stereotype(
    predicted: &str,
    expected_stereotype: Gender,
    lexicon: &GenderLexicon,
) -> StereotypeLabel {
    classify_stereotype_detailed(predicted, expected_stereotype, lexicon).label
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereotypeCounts {
    pub pro: usize,
    pub anti: usize,
    pub neutral: usize,
    /// Neutral verdicts that came from no lexicon match at all.
    pub no_match: usize,
}

impl StereotypeCounts {
    pub fn record(&mut self, c: &Classification) {
        match c.label {
            StereotypeLabel::Pro => self.pro += 1,
            StereotypeLabel::Anti => self.anti += 1,
            StereotypeLabel::Neutral => {
                self.neutral += 1;
                if c.matched.is_none() {
                    self.no_match += 1;
                }
            }
        }
    }

    pub fn total(&self) -> usize {
        self.pro + self.anti + self.neutral
    }
}

/// Pooled female count over pooled male count across all selections.
pub fn female_to_male_ratio(
    selections: &[Vec<String>],
    gender_of: &HashMap<String, Gender>,
) -> Result<f64> {
    let (mut female, mut male) = (0usize, 0usize);
    for name in selections.iter().flatten() {
        match gender_of.get(name) {
            Some(Gender::Female) => female += 1,
            Some(Gender::Male) => male += 1,
            None => return Err(RequalError::UnknownEntityGender(name.clone())),
        }
    }
    if male == 0 {
        return Err(RequalError::DivisionByZeroMales);
    }
    Ok(female as f64 / male as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical (1.0).
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean Jaccard similarity over all unordered pairs.
pub fn mean_pairwise_jaccard<T: Eq + Hash>(sets: &[HashSet<T>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            total += jaccard(&sets[i], &sets[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        1.0
    } else {
        total / pairs as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderSensitivity {
    pub mean_jaccard_shuffled: f64,
    pub mean_jaccard_unshuffled: f64,
    pub trials: usize,
    /// Pairs where both outputs named no entity (scored 1.0 by convention).
    pub empty_pairs: usize,
}

/// Issues `trials` queries with the pool in its given order and `trials`
/// with a fresh shuffle each time, then compares within-condition overlap.
pub fn order_sensitivity(
    task: &TaskSpec,
    llm: &dyn GenerationProvider,
    embedder: &dyn EmbeddingProvider,
    trials: usize,
    seed: u64,
) -> Result<OrderSensitivity> {
    if task.kind != TaskKind::SubsetSelection {
        return Err(RequalError::InvalidTask(
            "order sensitivity applies to subset_selection tasks".into(),
        ));
    }
    if trials < 2 {
        return Err(RequalError::InvalidPlan("order sensitivity needs at least 2 trials".into()));
    }
    let run = |shuffle: bool| -> Result<(Vec<HashSet<String>>, usize)> {
        let mut plan = SamplingPlan::fixed_count(trials, seed);
        plan.shuffle = shuffle;
        let out = collect_samples(task, &plan, llm, embedder)?;
        let sets: Vec<HashSet<String>> = out
            .valid_samples()
            .map(|s| parse_entity_list(&s.text).into_iter().collect())
            .collect();
        let empty = sets.iter().filter(|s| s.is_empty()).count();
        Ok((sets, empty * empty.saturating_sub(1) / 2))
    };
    let (unshuffled, e1) = run(false)?;
    let (shuffled, e2) = run(true)?;
    Ok(OrderSensitivity {
        mean_jaccard_shuffled: mean_pairwise_jaccard(&shuffled),
        mean_jaccard_unshuffled: mean_pairwise_jaccard(&unshuffled),
        trials,
        empty_pairs: e1 + e2,
    })
}

/// Bias and reliability of the three picks in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub bias_weighted: f64,
    pub bias_unweighted: f64,
    pub bias_minbias: f64,
    pub reliability_weighted: f64,
    pub reliability_unweighted: f64,
    pub reliability_minbias: f64,
    pub rfm_weighted: Option<f64>,
    pub rfm_unweighted: Option<f64>,
    pub rfm_minbias: Option<f64>,
}

impl TrialRecord {
    const METRICS: [&'static str; 9] = [
        "bias_weighted",
        "bias_unweighted",
        "bias_minbias",
        "reliability_weighted",
        "reliability_unweighted",
        "reliability_minbias",
        "rfm_weighted",
        "rfm_unweighted",
        "rfm_minbias",
    ];

    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "bias_weighted" => Some(self.bias_weighted),
            "bias_unweighted" => Some(self.bias_unweighted),
            "bias_minbias" => Some(self.bias_minbias),
            "reliability_weighted" => Some(self.reliability_weighted),
            "reliability_unweighted" => Some(self.reliability_unweighted),
            "reliability_minbias" => Some(self.reliability_minbias),
            "rfm_weighted" => self.rfm_weighted,
            "rfm_unweighted" => self.rfm_unweighted,
            "rfm_minbias" => self.rfm_minbias,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialSeries {
    records: Vec<TrialRecord>,
}

impl TrialSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TrialRecord) -> Result<()> {
        if self.records.iter().any(|r| r.trial == record.trial) {
            return Err(RequalError::Internal(format!(
                "duplicate trial id {}",
                record.trial
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn metric_values(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.metric(name)).collect()
    }

    pub fn summary(&self) -> SeriesSummary {
        let metrics = TrialRecord::METRICS
            .iter()
            .filter_map(|name| {
                MetricSummary::of(&self.metric_values(name)).map(|s| (name.to_string(), s))
            })
            .collect();
        let dominance = mann_whitney_less(
            &self.metric_values("bias_weighted"),
            &self.metric_values("bias_unweighted"),
        );
        SeriesSummary {
            trials: self.records.len(),
            metrics,
            bias_shift: dominance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    /// Quantiles at 0%, 10%, ..., 100% (linear interpolation).
    pub deciles: Vec<f64>,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let deciles = (0..=10)
            .map(|k| {
                let pos = k as f64 / 10.0 * (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
            })
            .collect();
        Some(Self {
            count: n,
            mean,
            std,
            deciles,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub trials: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// One-sided test that weighted picks are less biased than unweighted ones.
    pub bias_shift: Option<MannWhitney>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// P(U this small or smaller) under the null, normal approximation.
    pub p_value: f64,
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// One-sided Mann-Whitney U test of "x tends to be smaller than y", using
/// mid-ranks, tie-corrected variance and a continuity correction.
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Option<MannWhitney> {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let mut pooled: Vec<(f64, bool)> = x
        .iter()
        .map(|v| (*v, true))
        .chain(y.iter().map(|v| (*v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += pooled[i..=j].iter().filter(|p| p.1).count() as f64 * mid_rank;
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_x - n1f * (n1f + 1.0) / 2.0;
    let mean = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var.is_nan() || var <= 0.0 {
        return Some(MannWhitney {
            u,
            z: 0.0,
            p_value: 1.0,
        });
    }
    let z = (u - mean + 0.5) / var.sqrt();
    Some(MannWhitney {
        u,
        z,
        p_value: standard_normal_cdf(z),
    })
}

/// Writes the per-trial CSV and the summary JSON.
pub fn export_distributions(series: &TrialSeries, csv_path: &Path, summary_path: &Path) -> Result<SeriesSummary> {
    if series.is_empty() {
        return Err(RequalError::EmptySampleSet);
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    for r in &series.records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| RequalError::io(csv_path, e))?;
    let summary = series.summary();
    let mut raw = serde_json::to_string_pretty(&summary)
        .map_err(|e| RequalError::json("series summary", e))?;
    raw.push('\n');
    std::fs::write(summary_path, raw).map_err(|e| RequalError::io(summary_path, e))?;
    Ok(summary)
}

pub fn read_series_csv(path: &Path) -> Result<TrialSeries> {
    let mut r = csv::Reader::from_path(path)?;
    let mut series = TrialSeries::new();
    for rec in r.deserialize() {
        series.push(rec?)?;
    }
    Ok(series)
}

/// Entity names (and optional genders) read from a plain list or a CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub genders: HashMap<String, Gender>,
}

impl Dataset {
    /// One entity per non-blank line.
    pub fn from_lines(raw: &str) -> Self {
        Self {
            names: raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            genders: HashMap::new(),
        }
    }

    /// CSV with a header row; `name_column` is required, `gender_column`
    /// optional. Rows with an unrecognised gender keep no gender entry.
    pub fn from_csv(path: &Path, name_column: &str, gender_column: Option<&str>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let find = |col: &str| {
            headers.iter().position(|h| h.trim() == col).ok_or_else(|| {
                RequalError::Config(format!("{}: no column named `{col}`", path.display()))
            })
        };
        let name_idx = find(name_column)?;
        let gender_idx = gender_column.map(find).transpose()?;
        let mut ds = Self::default();
        for row in r.records() {
            let row = row?;
            let name = row.get(name_idx).unwrap_or("").trim().to_string();
            if name.is_empty() {
                continue;
            }
            if let Some(g) = gender_idx.and_then(|i| row.get(i)).and_then(Gender::parse) {
                ds.genders.insert(name.clone(), g);
            }
            ds.names.push(name);
        }
        Ok(ds)
    }
}
