//! Hand-built scenarios checked against straight-line reimplementations.

use requal::equity::{BiasMode, DemographicGroup, GroupSet};
use requal::evalkit::{classify_stereotype, Gender, GenderLexicon, StereotypeLabel};
use requal::sampling::{
    confidence_error, normal_quantile, ErrorReduction, OutputSample, PENALTY_RANGE,
    TEMPERATURE_RANGE,
};
use requal::{select, EmbeddingVector};
use statrs::distribution::{ContinuousCDF, Normal};

fn ev(xs: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(xs.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Nine outputs in (male, female, content) space. O3 leans male and sits
/// closest to the plain mean; O6 is perfectly balanced and second closest.
const NINE: [[f64; 3]; 9] = [
    [0.9, 0.1, 0.6],
    [0.8, 0.2, 0.8],
    [0.45, 0.25, 1.0],
    [0.1, 0.5, 0.9],
    [0.2, 0.7, 0.7],
    [0.35, 0.35, 1.0],
    [0.6, 0.1, 0.9],
    [0.3, 0.6, 0.8],
    [0.7, 0.3, 0.7],
];

#[test]
fn nine_samples_weighted_and_unweighted_disagree() {
    let male = [1.0, 0.0, 0.0];
    let female = [0.0, 1.0, 0.0];

    // oracle: plain loops, no library code
    let m = NINE.len() as f64;
    let mut plain = [0.0; 3];
    for s in &NINE {
        for j in 0..3 {
            plain[j] += s[j] / m;
        }
    }
    let beta: Vec<f64> = NINE.iter().map(|s| (cos(s, &male) - cos(s, &female)).abs()).collect();
    let lo = beta.iter().cloned().fold(f64::MAX, f64::min);
    let hi = beta.iter().cloned().fold(f64::MIN, f64::max);
    let w: Vec<f64> = beta.iter().map(|b| 1.0 - (b - lo) / (hi - lo)).collect();
    let mut weighted = [0.0; 3];
    for (s, wi) in NINE.iter().zip(&w) {
        for j in 0..3 {
            weighted[j] += wi * s[j] / m;
        }
    }
    let rank = |c: &[f64]| {
        let mut idx: Vec<usize> = (0..9).collect();
        idx.sort_by(|a, b| cos(&NINE[*b], c).total_cmp(&cos(&NINE[*a], c)));
        idx
    };
    let by_plain = rank(&plain);
    assert_eq!(&by_plain[..2], &[2, 5], "O3 nearest, O6 second");
    assert_eq!(rank(&weighted)[0], 5);
    assert!(beta[2] > beta[5]);

    // library
    let samples: Vec<OutputSample> = NINE
        .iter()
        .enumerate()
        .map(|(i, s)| OutputSample::from_embedding(i, format!("O{}", i + 1), ev(s)))
        .collect();
    let gs = GroupSet::binary(
        DemographicGroup::from_vector("male", ev(&male)).unwrap(),
        DemographicGroup::from_vector("female", ev(&female)).unwrap(),
    )
    .unwrap();
    let r = select(&samples, &gs, BiasMode::Absolute).unwrap();
    assert_eq!(r.unweighted.sample_index, 2);
    assert_eq!(r.weighted.sample_index, 5);
    assert_eq!(r.minbias.sample_index, 5);
    for j in 0..3 {
        assert!((r.centroid_plain.values()[j] - plain[j]).abs() <= 1e-12);
        assert!((r.centroid_weighted.values()[j] - weighted[j]).abs() <= 1e-12);
    }
    for (a, b) in r.bias_report.weights.as_slice().iter().zip(&w) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (i, s) in NINE.iter().enumerate() {
        assert!((r.reliabilities[i] - cos(s, &plain)).abs() <= 1e-12);
    }
}

#[test]
fn quantile_matches_reference_implementation() {
    let n = Normal::standard();
    let mut worst: f64 = 0.0;
    for k in 1..2000 {
        let p = k as f64 / 2000.0;
        worst = worst.max((normal_quantile(p).unwrap() - n.inverse_cdf(p)).abs());
    }
    for p in [1e-6, 1e-4, 0.975, 0.995, 1.0 - 1e-6] {
        worst = worst.max((normal_quantile(p).unwrap() - n.inverse_cdf(p)).abs());
    }
    assert!(worst < 1e-8, "max deviation {worst}");
    assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-5);
    assert!((normal_quantile(0.995).unwrap() - 2.575829).abs() < 1e-5);
}

#[test]
fn confidence_error_matches_analytic_value() {
    let z = Normal::standard().inverse_cdf(0.975);
    let e = confidence_error(&ev(&[1.0, 0.0]), 4, 0.95, ErrorReduction::L2).unwrap();
    assert!((e - z * 1.0 / 2.0).abs() < 1e-8);
    assert!((e - 0.979982).abs() < 1e-4);
}

#[test]
fn winobias_table_rows() {
    // (profession's stereotyped gender, weighted output, unweighted output)
    let lex = GenderLexicon::bundled();
    let rows = [
        (Gender::Male, "she", "he"),           // [The CEO]
        (Gender::Female, "the patron", "she"), // [librarian]
        (Gender::Female, "she", "he"),         // [hairdresser]
    ];
    let labels: Vec<(StereotypeLabel, StereotypeLabel)> = rows
        .iter()
        .map(|(g, w, u)| (classify_stereotype(w, *g, &lex), classify_stereotype(u, *g, &lex)))
        .collect();
    assert_eq!(
        labels,
        vec![
            (StereotypeLabel::Anti, StereotypeLabel::Pro),
            (StereotypeLabel::Neutral, StereotypeLabel::Pro),
            (StereotypeLabel::Pro, StereotypeLabel::Anti),
        ]
    );
}

#[test]
fn parameter_ranges() {
    assert_eq!(TEMPERATURE_RANGE, (0.5, 1.0));
    assert_eq!(PENALTY_RANGE, (0.5, 2.0));
}
