//! Demographic-group vectors, bias scoring and equity weights.
//!
//! A group's vector is estimated by embedding a handful of short sentences
//! that mention little besides the group itself and averaging them. The bias
//! of an output is the largest gap between its similarities to any two
//! groups; in binary signed mode it is the majority-minus-minority gap.
//! Weights come from min-max normalising those values over the sample set so
//! the least biased sample gets weight 1 and the most biased gets weight 0.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RequalError, Result};
use crate::providers::EmbeddingProvider;
use crate::vector::{centroid, cosine_similarity, EmbeddingVector, WeightVector};

/// Default binary gender group definitions (majority `male`, minority `female`).
pub const DEFAULT_GENDER_GROUPS: &str = include_str!("../data/gender_groups.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BiasMode {
    /// Largest pairwise similarity gap, any number of groups.
    #[default]
    Absolute,
    /// `sim(majority) - sim(minority)`, binary groups only. `invert` flips
    /// the sign for tasks whose stereotype points at the minority group.
    Signed {
        #[serde(default)]
        invert: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDefinition {
    pub name: String,
    pub seed_sentences: Vec<String>,
}

/// The group definition file: `{"groups":[{"name","seed_sentences"}], "majority", "minority"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    pub groups: Vec<GroupDefinition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minority: Option<String>,
}

impl GroupFile {
    pub fn parse(raw: &str) -> Result<Self> {
        let file: Self =
            serde_json::from_str(raw).map_err(|e| RequalError::json("group file", e))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| RequalError::io(path, e))?;
        let file: Self = serde_json::from_str(&raw)
            .map_err(|e| RequalError::json(format!("group file {}", path.display()), e))?;
        file.validate()?;
        Ok(file)
    }

    pub fn default_gender() -> Self {
        Self::parse(DEFAULT_GENDER_GROUPS).expect("bundled group file is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(RequalError::InvalidGroupSet(format!(
                "need at least two groups, found {}",
                self.groups.len()
            )));
        }
        let mut names = HashSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return Err(RequalError::InvalidGroupSet(format!(
                    "duplicate group name `{}`",
                    g.name
                )));
            }
            if g.seed_sentences.is_empty() {
                return Err(RequalError::EmptySeedSet(g.name.clone()));
            }
        }
        self.role_indices()?;
        Ok(())
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.groups
            .iter()
            .position(|g| g.name == name)
            .ok_or_else(|| RequalError::InvalidGroupSet(format!("no group named `{name}`")))
    }

    fn role_indices(&self) -> Result<(Option<usize>, Option<usize>)> {
        let majority = self.majority.as_deref().map(|n| self.index_of(n)).transpose()?;
        let minority = self.minority.as_deref().map(|n| self.index_of(n)).transpose()?;
        if majority.is_some() && majority == minority {
            return Err(RequalError::InvalidGroupSet(
                "majority and minority must differ".into(),
            ));
        }
        Ok((majority, minority))
    }

    /// Estimates every group vector with `embedder`.
    pub fn estimate(&self, embedder: &dyn EmbeddingProvider) -> Result<GroupSet> {
        let vectors = self
            .groups
            .iter()
            .map(|g| estimate_group_vector(&g.seed_sentences, embedder).map_err(|e| match e {
                RequalError::EmptySeedSet(_) => RequalError::EmptySeedSet(g.name.clone()),
                other => other,
            }))
            .collect::<Result<Vec<_>>>()?;
        self.with_vectors(vectors)
    }

    fn with_vectors(&self, vectors: Vec<EmbeddingVector>) -> Result<GroupSet> {
        let (majority, minority) = self.role_indices()?;
        let groups = self
            .groups
            .iter()
            .zip(vectors)
            .map(|(def, v)| DemographicGroup::new(def.name.clone(), def.seed_sentences.clone(), v))
            .collect::<Result<Vec<_>>>()?;
        GroupSet::new(groups, majority, minority)
    }

    /// Content hash of the group names and sentences, combined with the
    /// embedder identity.
    pub fn cache_key(&self, embedder_identity: &str) -> String {
        let mut h = Sha256::new();
        let mut feed = |s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        feed(embedder_identity);
        for g in &self.groups {
            feed(&g.name);
            for s in &g.seed_sentences {
                feed(s);
            }
        }
        hex::encode(h.finalize())
    }
}

/// A named group with its unit-norm vector estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicGroup {
    pub name: String,
    pub seed_sentences: Vec<String>,
    vector: EmbeddingVector,
}

impl DemographicGroup {
    /// `vector` is normalised to unit length.
    pub fn new(
        name: impl Into<String>,
        seed_sentences: Vec<String>,
        vector: EmbeddingVector,
    ) -> Result<Self> {
        let name = name.into();
        if seed_sentences.is_empty() {
            return Err(RequalError::EmptySeedSet(name));
        }
        Ok(Self {
            name,
            seed_sentences,
            vector: vector.normalized()?,
        })
    }

    /// Group built straight from a known direction; used by synthetic setups.
    pub fn from_vector(name: impl Into<String>, vector: EmbeddingVector) -> Result<Self> {
        let name = name.into();
        let seed = vec![name.clone()];
        Self::new(name, seed, vector)
    }

    pub fn vector(&self) -> &EmbeddingVector {
        &self.vector
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSet {
    groups: Vec<DemographicGroup>,
    majority: Option<usize>,
    minority: Option<usize>,
}

impl GroupSet {
    pub fn new(
        groups: Vec<DemographicGroup>,
        majority: Option<usize>,
        minority: Option<usize>,
    ) -> Result<Self> {
        if groups.len() < 2 {
            return Err(RequalError::InvalidGroupSet(format!(
                "need at least two groups, found {}",
                groups.len()
            )));
        }
        let mut names = HashSet::new();
        for g in &groups {
            if !names.insert(g.name.as_str()) {
                return Err(RequalError::InvalidGroupSet(format!(
                    "duplicate group name `{}`",
                    g.name
                )));
            }
        }
        let dim = groups[0].vector.dim();
        if let Some(g) = groups.iter().find(|g| g.vector.dim() != dim) {
            return Err(RequalError::DimensionMismatch {
                expected: dim,
                found: g.vector.dim(),
            });
        }
        for idx in [majority, minority].into_iter().flatten() {
            if idx >= groups.len() {
                return Err(RequalError::InvalidGroupSet(format!(
                    "group index {idx} out of range"
                )));
            }
        }
        if majority.is_some() && majority == minority {
            return Err(RequalError::InvalidGroupSet(
                "majority and minority must differ".into(),
            ));
        }
        Ok(Self {
            groups,
            majority,
            minority,
        })
    }

    /// Binary set with explicit majority (first) and minority (second).
    pub fn binary(majority: DemographicGroup, minority: DemographicGroup) -> Result<Self> {
        Self::new(vec![majority, minority], Some(0), Some(1))
    }

    pub fn groups(&self) -> &[DemographicGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.groups[0].vector.dim()
    }

    pub fn names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name.clone()).collect()
    }

    fn signed_roles(&self) -> Result<(usize, usize)> {
        match (self.groups.len(), self.majority, self.minority) {
            (2, Some(maj), Some(min)) => Ok((maj, min)),
            _ => Err(RequalError::SignedModeRequiresBinaryGroups),
        }
    }

    /// Fails unless `mode` can be evaluated against this set.
    pub fn check_mode(&self, mode: BiasMode) -> Result<()> {
        if let BiasMode::Signed { .. } = mode {
            self.signed_roles()?;
        }
        Ok(())
    }
}

/// Mean of the seed-sentence embeddings, normalised to unit length.
pub fn estimate_group_vector(
    seed_sentences: &[String],
    embedder: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector> {
    if seed_sentences.is_empty() {
        return Err(RequalError::EmptySeedSet(String::new()));
    }
    let embedded = embedder.embed(seed_sentences)?;
    let mean = centroid(&embedded)?;
    if mean.is_degenerate() {
        return Err(RequalError::DegenerateCentroid);
    }
    mean.normalized()
}

/// Cosine similarity of `v` to every group, in group order.
pub fn group_similarities(v: &EmbeddingVector, gs: &GroupSet) -> Result<Vec<f64>> {
    gs.groups
        .iter()
        .map(|g| cosine_similarity(v, &g.vector))
        .collect()
}

/// `max(s) - min(s)`, which equals the largest pairwise `|s_i - s_j|`.
pub fn similarity_spread(sims: &[f64]) -> f64 {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = sims.iter().copied().fold(f64::INFINITY, f64::min);
    if sims.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Largest similarity disparity between any two groups.
pub fn bias(v: &EmbeddingVector, gs: &GroupSet) -> Result<f64> {
    Ok(similarity_spread(&group_similarities(v, gs)?))
}

/// `sim(v, majority) - sim(v, minority)`; negative when `v` leans minority.
pub fn signed_bias(v: &EmbeddingVector, gs: &GroupSet) -> Result<f64> {
    let (maj, min) = gs.signed_roles()?;
    Ok(cosine_similarity(v, &gs.groups[maj].vector)? - cosine_similarity(v, &gs.groups[min].vector)?)
}

/// Bias in excess of the smallest bias observed in the sample set.
pub fn harmful_bias(betas: &[f64]) -> Result<Vec<f64>> {
    let min = betas
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(RequalError::EmptySampleSet)?;
    Ok(betas.iter().map(|b| b - min).collect())
}

/// `w_i = 1 - (b_i - min b) / (max b - min b)`; all ones when the range is zero.
pub fn equity_weights(values: &[f64]) -> Result<WeightVector> {
    let min = values
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(RequalError::EmptySampleSet)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return Ok(WeightVector::uniform(values.len()));
    }
    WeightVector::new(
        values
            .iter()
            .map(|b| (1.0 - (b - min) / range).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Per-sample bias scores and the weights derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub mode: BiasMode,
    pub group_names: Vec<String>,
    /// Largest pairwise similarity gap per sample.
    pub beta: Vec<f64>,
    /// Majority-minus-minority gap per sample (signed mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed_beta: Option<Vec<f64>>,
    /// `beta_i - beta_min`.
    pub harmful_beta: Vec<f64>,
    pub group_similarities: Vec<Vec<f64>>,
    /// Smallest bias in the sample; stands in for the unknowable inevitable bias.
    #[serde(rename = "beta_n_estimated")]
    pub beta_min: f64,
    pub beta_max: f64,
    /// The values fed into the weighting: `beta`, `signed_beta`, or its negation.
    pub weighting_values: Vec<f64>,
    pub weights: WeightVector,
}

impl BiasReport {
    pub fn compute(vs: &[EmbeddingVector], gs: &GroupSet, mode: BiasMode) -> Result<Self> {
        if vs.is_empty() {
            return Err(RequalError::EmptySampleSet);
        }
        gs.check_mode(mode)?;
        let sims = vs
            .iter()
            .map(|v| group_similarities(v, gs))
            .collect::<Result<Vec<_>>>()?;
        let beta: Vec<f64> = sims.iter().map(|s| similarity_spread(s)).collect();
        let signed_beta = match mode {
            BiasMode::Absolute => None,
            BiasMode::Signed { .. } => {
                let (maj, min) = gs.signed_roles()?;
                Some(sims.iter().map(|s| s[maj] - s[min]).collect::<Vec<_>>())
            }
        };
        let weighting_values = match (mode, &signed_beta) {
            (BiasMode::Signed { invert: true }, Some(s)) => s.iter().map(|x| -x).collect(),
            (BiasMode::Signed { invert: false }, Some(s)) => s.clone(),
            _ => beta.clone(),
        };
        let harmful_beta = harmful_bias(&beta)?;
        let beta_min = beta.iter().copied().fold(f64::INFINITY, f64::min);
        let beta_max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = equity_weights(&weighting_values)?;
        Ok(Self {
            mode,
            group_names: gs.names(),
            beta,
            signed_beta,
            harmful_beta,
            group_similarities: sims,
            beta_min,
            beta_max,
            weighting_values,
            weights,
        })
    }
}

/// Estimated group vectors persisted per embedder and group-file content.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroupVectorCache {
    #[serde(default)]
    pub entries: BTreeMap<String, CacheEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub embedder: String,
    pub groups: Vec<CachedGroup>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedGroup {
    pub name: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss,
}

impl GroupVectorCache {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map_err(|e| RequalError::json(format!("group cache {}", path.display()), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(RequalError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(self)
            .map_err(|e| RequalError::json("group cache", e))?;
        raw.push('\n');
        std::fs::write(path, raw).map_err(|e| RequalError::io(path, e))
    }
}

/// Returns the group set for `file`, reusing `cache_path` when it already
/// holds vectors for the same embedder identity and sentences.
pub fn estimate_groups_cached(
    file: &GroupFile,
    embedder: &dyn EmbeddingProvider,
    cache_path: &Path,
) -> Result<(GroupSet, CacheOutcome)> {
    let identity = embedder.identity();
    let key = file.cache_key(&identity);
    let mut cache = GroupVectorCache::load_or_default(cache_path)?;
    if let Some(entry) = cache.entries.get(&key) {
        let names_match = entry.groups.len() == file.groups.len()
            && entry
                .groups
                .iter()
                .zip(&file.groups)
                .all(|(c, d)| c.name == d.name);
        if names_match {
            let vectors = entry.groups.iter().map(|g| g.vector.clone()).collect();
            return Ok((file.with_vectors(vectors)?, CacheOutcome::Hit));
        }
    }
    let set = file.estimate(embedder)?;
    cache.entries.insert(
        key,
        CacheEntry {
            embedder: identity,
            groups: set
                .groups
                .iter()
                .map(|g| CachedGroup {
                    name: g.name.clone(),
                    vector: g.vector.clone(),
                })
                .collect(),
        },
    );
    cache.save(cache_path)?;
    Ok((set, CacheOutcome::Miss))
}
