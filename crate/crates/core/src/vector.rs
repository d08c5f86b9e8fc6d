//! Embedding-vector arithmetic.
//!
//! Everything downstream of the embedder works in this module's terms:
//! cosine similarity and distance, plain and weighted centroids, per-dimension
//! spread, and nearest-neighbour lookup against a centroid. All functions are
//! pure; accumulation uses compensated summation so results do not depend on
//! platform-specific fused operations or summation order quirks.

use serde::{Deserialize, Serialize};

use crate::error::{RequalError, Result};

/// Centroids with a norm below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Raw cosine values further than this outside [-1, 1] indicate a bug.
const COSINE_SLACK: f64 = 1e-9;

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// A dense embedding with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    /// A zero vector is allowed here; operations that need a direction
    /// reject it themselves.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(RequalError::EmptyVector);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(RequalError::NonFiniteValue(pos));
        }
        let norm = compensated_sum(values.iter().map(|v| v * v)).sqrt();
        Ok(Self { values, norm })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_degenerate(&self) -> bool {
        self.norm < DEGENERATE_NORM
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(compensated_sum(
            self.values.iter().zip(&other.values).map(|(a, b)| a * b),
        ))
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * k).collect())
    }

    /// Unit-length copy. Fails with `ZeroNormVector` for a (near) zero vector.
    pub fn normalized(&self) -> Result<Self> {
        if self.is_degenerate() {
            return Err(RequalError::ZeroNormVector);
        }
        self.scaled(1.0 / self.norm)
    }

    pub fn euclidean_distance_sq(&self, other: &Self) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(compensated_sum(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b) * (a - b)),
        ))
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = RequalError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Per-sample weights in [0, 1], index-aligned with a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (index, &value) in weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(RequalError::InvalidWeight { index, value });
            }
        }
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = RequalError;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(RequalError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn common_dim(vs: &[EmbeddingVector]) -> Result<usize> {
    let first = vs.first().ok_or(RequalError::EmptySampleSet)?;
    let dim = first.dim();
    for v in &vs[1..] {
        check_dim(dim, v.dim())?;
    }
    Ok(dim)
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(RequalError::ZeroNormVector);
    }
    // Normalising each side before the product keeps the result symmetric
    // and avoids overflow for very large coordinates.
    let raw = compensated_sum(
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x / a.norm) * (y / b.norm)),
    );
    if raw.abs() > 1.0 + COSINE_SLACK {
        return Err(RequalError::Internal(format!(
            "cosine similarity {raw} outside [-1, 1]"
        )));
    }
    Ok(raw.clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity(a, b)`, in [0, 2].
pub fn cosine_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Coordinate-wise arithmetic mean.
///
/// The result may be the zero vector (for a symmetric sample set); callers
/// that go on to take cosines should check [`EmbeddingVector::is_degenerate`].
pub fn centroid(vs: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let dim = common_dim(vs)?;
    let m = vs.len() as f64;
    let values = (0..dim)
        .map(|j| compensated_sum(vs.iter().map(|v| v.values[j])) / m)
        .collect();
    EmbeddingVector::new(values)
}

/// `(1/m) * sum_i w_i * v_i`.
///
/// The divisor is the sample count, not the weight total. Only the direction
/// matters for selection, so the shrinkage is harmless.
pub fn weighted_centroid(vs: &[EmbeddingVector], w: &WeightVector) -> Result<EmbeddingVector> {
    let dim = common_dim(vs)?;
    if vs.len() != w.len() {
        return Err(RequalError::LengthMismatch {
            samples: vs.len(),
            weights: w.len(),
        });
    }
    let m = vs.len() as f64;
    let values = (0..dim)
        .map(|j| {
            compensated_sum(vs.iter().zip(w.as_slice()).map(|(v, wi)| wi * v.values[j])) / m
        })
        .collect();
    let c = EmbeddingVector::new(values)?;
    if c.is_degenerate() {
        return Err(RequalError::DegenerateCentroid);
    }
    Ok(c)
}

/// Index of the vector most cosine-similar to `c`; ties go to the lowest index.
pub fn nearest_to(vs: &[EmbeddingVector], c: &EmbeddingVector) -> Result<usize> {
    if vs.is_empty() {
        return Err(RequalError::EmptySampleSet);
    }
    if c.norm == 0.0 {
        return Err(RequalError::ZeroNormVector);
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, v) in vs.iter().enumerate() {
        let sim = cosine_similarity(v, c)?;
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    Ok(best)
}

/// Coordinate-wise sample standard deviation (divisor m - 1).
pub fn per_dim_std(vs: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    if vs.len() < 2 {
        return Err(RequalError::InsufficientSamples {
            needed: 2,
            got: vs.len(),
        });
    }
    common_dim(vs)?;
    let m = vs.len() as f64;
    let denom = m - 1.0;
    // Deviations are taken from the first sample so identical inputs give exactly 0.
    let values = (0..vs[0].dim())
        .map(|j| {
            let x0 = vs[0].values[j];
            let shift = compensated_sum(vs.iter().map(|v| v.values[j] - x0)) / m;
            let ss = compensated_sum(vs.iter().map(|v| (v.values[j] - x0 - shift).powi(2)));
            (ss / denom).sqrt()
        })
        .collect();
    EmbeddingVector::new(values)
}
