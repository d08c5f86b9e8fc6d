//! The aggregation step: score bias, weight, build the plain and equitable
//! centroids, and pick the samples nearest to each.
//!
//! Three picks are always reported: the sample nearest the weighted
//! centroid (the answer), the sample nearest the plain centroid (most
//! reliable), and the least biased sample. Reliability of every pick is
//! measured against the plain centroid, the estimate of the output
//! distribution's mean.

use serde::{Deserialize, Serialize};

use crate::equity::{BiasMode, BiasReport, GroupSet};
use crate::error::{RequalError, Result};
use crate::sampling::OutputSample;
use crate::vector::{
    centroid, cosine_similarity, nearest_to, weighted_centroid, EmbeddingVector, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    /// Position among the valid samples handed to selection.
    pub position: usize,
    /// The sample's issue-order index.
    pub sample_index: usize,
    pub reliability: f64,
    /// The value that drove weighting: absolute or signed bias.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub weighted: Pick,
    pub unweighted: Pick,
    pub minbias: Pick,
    pub centroid_plain: EmbeddingVector,
    /// Weighted centroid with the 1/m factor applied.
    pub centroid_weighted: EmbeddingVector,
    pub centroid_weighted_unit: EmbeddingVector,
    /// Expected reliability of each valid sample, by position.
    pub reliabilities: Vec<f64>,
    pub bias_report: BiasReport,
}

/// Cosine similarity of a sample's embedding to the plain centroid.
pub fn expected_reliability(sample: &OutputSample, centroid_plain: &EmbeddingVector) -> Result<f64> {
    let v = sample.embedding.as_ref().ok_or(RequalError::EmptySampleSet)?;
    cosine_similarity(v, centroid_plain)
}

fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Selection over raw embeddings. `indices` maps positions to sample indices.
pub fn select_vectors(
    vs: &[EmbeddingVector],
    indices: &[usize],
    gs: &GroupSet,
    mode: BiasMode,
) -> Result<SelectionResult> {
    if vs.is_empty() {
        return Err(RequalError::EmptySampleSet);
    }
    if indices.len() != vs.len() {
        return Err(RequalError::LengthMismatch {
            samples: vs.len(),
            weights: indices.len(),
        });
    }
    let bias_report = BiasReport::compute(vs, gs, mode)?;
    let plain = centroid(vs)?;
    if plain.is_degenerate() {
        return Err(RequalError::DegenerateCentroid);
    }
    let weighted = weighted_centroid(vs, &bias_report.weights)?;
    let reliabilities = vs
        .iter()
        .map(|v| cosine_similarity(v, &plain))
        .collect::<Result<Vec<_>>>()?;

    let pick = |position: usize| Pick {
        position,
        sample_index: indices[position],
        reliability: reliabilities[position],
        bias: bias_report.weighting_values[position],
    };
    let unweighted = pick(nearest_to(vs, &plain)?);
    let weighted_pick = pick(nearest_to(vs, &weighted)?);
    let minbias = pick(argmin_lowest(&bias_report.weighting_values));

    Ok(SelectionResult {
        weighted: weighted_pick,
        unweighted,
        minbias,
        centroid_plain: plain,
        centroid_weighted_unit: weighted.normalized()?,
        centroid_weighted: weighted,
        reliabilities,
        bias_report,
    })
}

/// Runs selection over the valid samples of a run; invalid ones are dropped first.
pub fn select(samples: &[OutputSample], gs: &GroupSet, mode: BiasMode) -> Result<SelectionResult> {
    let mut vs = Vec::new();
    let mut indices = Vec::new();
    for s in samples.iter().filter(|s| s.valid) {
        let v = s.embedding.clone().ok_or_else(|| {
            RequalError::Internal(format!("valid sample {} has no embedding", s.index))
        })?;
        if let Some(first) = vs.first().map(EmbeddingVector::dim) {
            if first != v.dim() {
                return Err(RequalError::DimensionMismatch {
                    expected: first,
                    found: v.dim(),
                });
            }
        }
        vs.push(v);
        indices.push(s.index);
    }
    select_vectors(&vs, &indices, gs, mode)
}

/// Weighted pick for an explicit weight vector; used to compare normalisations.
pub fn weighted_pick(vs: &[EmbeddingVector], weights: &WeightVector) -> Result<usize> {
    nearest_to(vs, &weighted_centroid(vs, weights)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equity::DemographicGroup;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    fn groups() -> GroupSet {
        GroupSet::binary(
            DemographicGroup::from_vector("male", v(&[1., 0., 0.])).unwrap(),
            DemographicGroup::from_vector("female", v(&[0., 1., 0.])).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_sample() {
        let r = select_vectors(&[v(&[0.3, 0.2, 1.0])], &[7], &groups(), BiasMode::Absolute).unwrap();
        assert_eq!(r.weighted.position, 0);
        assert_eq!(r.unweighted.sample_index, 7);
        assert_eq!(r.minbias.position, 0);
        assert!((r.unweighted.reliability - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_bias_collapses_to_unweighted() {
        let vs = [v(&[0.5, 0.5, 1.0]), v(&[0.2, 0.2, 1.0]), v(&[0.9, 0.9, 0.1])];
        let r = select_vectors(&vs, &[0, 1, 2], &groups(), BiasMode::Absolute).unwrap();
        assert!(r.bias_report.weights.as_slice().iter().all(|w| *w == 1.0));
        assert_eq!(r.weighted.position, r.unweighted.position);
    }

    #[test]
    fn reliability_examples() {
        let c = v(&[0.5, 0.5]);
        let at = OutputSample::from_embedding(0, "a", v(&[1., 1.]));
        assert!((expected_reliability(&at, &c).unwrap() - 1.0).abs() < 1e-12);
        let orth = OutputSample::from_embedding(1, "b", v(&[1., -1.]));
        assert!(expected_reliability(&orth, &c).unwrap().abs() < 1e-12);
        for s in [v(&[1., 0.]), v(&[0., 1.])] {
            let r = expected_reliability(&OutputSample::from_embedding(0, "x", s), &c).unwrap();
            assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_samples_are_dropped() {
        let mut bad = OutputSample::from_embedding(0, "bad", v(&[1., 0., 0.]));
        bad.valid = false;
        bad.embedding = None;
        let good = OutputSample::from_embedding(1, "good", v(&[0.2, 0.1, 1.0]));
        let r = select(&[bad.clone(), good], &groups(), BiasMode::Absolute).unwrap();
        assert_eq!(r.weighted.sample_index, 1);
        assert!(matches!(
            select(&[bad], &groups(), BiasMode::Absolute),
            Err(RequalError::EmptySampleSet)
        ));
    }

    #[test]
    fn symmetric_samples_are_degenerate() {
        let vs = [v(&[1., 0., 0.]), v(&[-1., 0., 0.])];
        assert!(matches!(
            select_vectors(&vs, &[0, 1], &groups(), BiasMode::Absolute),
            Err(RequalError::DegenerateCentroid)
        ));
    }
}
