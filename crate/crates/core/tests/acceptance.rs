//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its own PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::time::{Duration, Instant};

use common::{cli, example_workspace, StubReply, StubServer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use requal::cli::{exit_code, EXIT_PROVIDER};
use requal::equity::{
    bias, equity_weights, group_similarities, harmful_bias, similarity_spread, BiasMode,
    DemographicGroup, GroupSet,
};
use requal::evalkit::{
    classify_stereotype, export_distributions, female_to_male_ratio, jaccard, mann_whitney_less,
    order_sensitivity, read_series_csv, Gender, GenderLexicon, StereotypeLabel,
};
use requal::providers::http::{HttpConfig, HttpEmbedder, HttpGenerator};
use requal::providers::simulated::{
    DistributionGenerator, Outcome, PrefixEchoGenerator, SimulatedDistribution, SimulatedEmbedder,
};
use requal::providers::{EmbeddingProvider, GenerationProvider, GenerationRequest};
use requal::sampling::{
    collect_samples, plan_sample_count, sequence_probability, SamplingPlan, TaskSpec,
};
use requal::selection::{expected_reliability, select_vectors};
use requal::vector::{
    centroid, nearest_to, weighted_centroid, EmbeddingVector, WeightVector,
};
use requal::{run_campaign, OutputSample, RequalError};
use statrs::distribution::{ContinuousCDF, Normal};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ev(xs: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(xs).unwrap()
}

fn check(ok: bool, detail: impl Into<String>) -> Verdict {
    if ok {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("formula conformance", c1_formulas),
        ("bias equivalence", c2_bias_equivalence),
        ("scale invariance of selection", c3_scale_invariance),
        ("CLT convergence and fixed-error stop", c4_clt),
        ("equity shift", c5_equity_shift),
        ("argmax/argmin properties", c6_argmax),
        ("order sensitivity", c7_order_sensitivity),
        ("metric exactness", c8_metrics),
        ("determinism", c9_determinism),
        ("protocol robustness", c10_protocol),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.2}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- straight-line oracles -------------------------------------------------

fn o_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn o_cos(a: &[f64], b: &[f64]) -> f64 {
    o_dot(a, b) / (o_dot(a, a).sqrt() * o_dot(b, b).sqrt())
}

fn o_mean(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; vs[0].len()];
    for v in vs {
        for j in 0..c.len() {
            c[j] += v[j];
        }
    }
    for x in c.iter_mut() {
        *x /= vs.len() as f64;
    }
    c
}

fn o_weighted_mean(vs: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; vs[0].len()];
    for (v, wi) in vs.iter().zip(w) {
        for j in 0..c.len() {
            c[j] += wi * v[j];
        }
    }
    for x in c.iter_mut() {
        *x /= vs.len() as f64;
    }
    c
}

fn o_bias(v: &[f64], groups: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in groups {
        for b in groups {
            worst = worst.max((o_cos(v, a) - o_cos(v, b)).abs());
        }
    }
    worst
}

fn o_weights(b: &[f64]) -> Vec<f64> {
    let lo = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    b.iter()
        .map(|x| if hi == lo { 1.0 } else { 1.0 - (x - lo) / (hi - lo) })
        .collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if o_dot(&v, &v) > 1e-4 {
            return v;
        }
    }
}

fn groupset(vs: &[Vec<f64>]) -> GroupSet {
    let groups = vs
        .iter()
        .enumerate()
        .map(|(i, v)| DemographicGroup::from_vector(format!("g{i}"), ev(v.clone())).unwrap())
        .collect();
    GroupSet::new(groups, None, None).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- criteria --------------------------------------------------------------

fn c1_formulas() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        let d = rng.random_range(2..=8);
        let l = rng.random_range(2..=4);
        let raw: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(&mut rng, d)).collect();
        let groups: Vec<Vec<f64>> = (0..l).map(|_| rand_vec(&mut rng, d)).collect();
        let vs: Vec<EmbeddingVector> = raw.iter().cloned().map(ev).collect();
        let gs = groupset(&groups);

        // plain centroid
        let c = centroid(&vs).unwrap();
        let oc = o_mean(&raw);
        worst = worst.max(max_abs_diff(c.values(), &oc));
        // bias and harmful bias
        let betas: Vec<f64> = vs.iter().map(|v| bias(v, &gs).unwrap()).collect();
        let obetas: Vec<f64> = raw.iter().map(|v| o_bias(v, &groups)).collect();
        worst = worst.max(max_abs_diff(&betas, &obetas));
        let omin = obetas.iter().cloned().fold(f64::INFINITY, f64::min);
        let oharm: Vec<f64> = obetas.iter().map(|b| b - omin).collect();
        worst = worst.max(max_abs_diff(&harmful_bias(&betas).unwrap(), &oharm));
        // equity weights
        let w = equity_weights(&betas).unwrap();
        let ow = o_weights(&obetas);
        worst = worst.max(max_abs_diff(w.as_slice(), &ow));
        // weighted centroid
        if let Ok(cw) = weighted_centroid(&vs, &w) {
            worst = worst.max(max_abs_diff(cw.values(), &o_weighted_mean(&raw, &ow)));
        }
        // expected reliability
        if o_dot(&oc, &oc).sqrt() >= 1e-12 {
            for (i, r) in raw.iter().enumerate() {
                let s = OutputSample::from_embedding(i, "", vs[i].clone());
                worst = worst.max((expected_reliability(&s, &c).unwrap() - o_cos(r, &oc)).abs());
            }
        }
        // m = floor(B / c)
        let budget = rng.random_range(1.0..500.0);
        let cost = rng.random_range(0.1..budget);
        let m_lib = plan_sample_count(&SamplingPlan::fixed_budget(budget, cost, 0)).unwrap();
        worst = worst.max((m_lib as f64 - (budget / cost).floor()).abs());
        // Pr = product of token probabilities
        let n_tok = rng.random_range(1..=20);
        let probs: Vec<f64> = (0..n_tok).map(|_| rng.random_range(0.05..=1.0)).collect();
        let mut product = 1.0;
        for p in &probs {
            product *= p;
        }
        worst = worst.max((sequence_probability(&probs).unwrap() - product).abs());
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs < 5.0,
        format!("{checked} fuzzed inputs, max |dev| {worst:.2e} (tol 1e-9), {secs:.2}s (limit 5s)"),
    )
}

fn c2_bias_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let l = rng.random_range(2..=6);
        let s: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut pairwise: f64 = 0.0;
        for a in &s {
            for b in &s {
                pairwise = pairwise.max((a - b).abs());
            }
        }
        worst = worst.max((pairwise - similarity_spread(&s)).abs());

        // and through real group vectors
        let d = rng.random_range(2..=6);
        let groups: Vec<Vec<f64>> = (0..l).map(|_| rand_vec(&mut rng, d)).collect();
        let v = ev(rand_vec(&mut rng, d));
        let gs = groupset(&groups);
        let sims = group_similarities(&v, &gs).unwrap();
        let mut pw: f64 = 0.0;
        for a in &sims {
            for b in &sims {
                pw = pw.max((a - b).abs());
            }
        }
        worst = worst.max((pw - bias(&v, &gs).unwrap()).abs());
    }
    check(worst <= 1e-12, format!("1000 cases, max |dev| {worst:.2e} (tol 1e-12)"))
}

fn c3_scale_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agree = 0;
    let mut sets = 0;
    while sets < 500 {
        let m = rng.random_range(2..=15);
        let d = rng.random_range(2..=8);
        let raw: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(&mut rng, d)).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
        let vs: Vec<EmbeddingVector> = raw.into_iter().map(ev).collect();
        let wv = WeightVector::new(w.clone()).unwrap();
        let Ok(c) = weighted_centroid(&vs, &wv) else { continue };
        sets += 1;
        let sum_w: f64 = w.iter().sum();
        let base = nearest_to(&vs, &c).unwrap();
        // sum-normalised alternative: sum w_i v_i / sum w_i
        let mut alt = vec![0.0; d];
        for (v, wi) in vs.iter().zip(&w) {
            for (a, x) in alt.iter_mut().zip(v.values()) {
                *a += wi * x / sum_w;
            }
        }
        let same = [1.0 / m as f64, 1.0 / sum_w, 7.3]
            .iter()
            .all(|k| nearest_to(&vs, &c.scaled(*k).unwrap()).unwrap() == base)
            && nearest_to(&vs, &ev(alt)).unwrap() == base;
        agree += usize::from(same);
    }
    check(agree == sets, format!("{agree}/{sets} sets identical under all scalings"))
}

fn square_distribution() -> SimulatedDistribution {
    SimulatedDistribution::new(vec![
        Outcome::new("hh", 0.25, vec![1.5, 1.5]).unwrap(),
        Outcome::new("ll", 0.25, vec![0.5, 0.5]).unwrap(),
        Outcome::new("hl", 0.25, vec![1.5, 0.5]).unwrap(),
        Outcome::new("lh", 0.25, vec![0.5, 1.5]).unwrap(),
    ])
    .unwrap()
}

fn c4_clt() -> Verdict {
    let start = Instant::now();
    let dist = square_distribution();
    let mu = dist.analytic_mean().unwrap();
    let emb = SimulatedEmbedder::for_distribution(&dist).unwrap();
    let llm = DistributionGenerator::new(dist);
    let task = TaskSpec::freeform("draw");
    let sigma_norm = (0.5f64 * 0.5 * 2.0).sqrt();
    let m = 1000;
    let bound = 4.0 * sigma_norm / (m as f64).sqrt();
    let mut within = 0;
    for seed in 0..100 {
        let out = collect_samples(&task, &SamplingPlan::fixed_count(m, seed), &llm, &emb).unwrap();
        let vs: Vec<EmbeddingVector> = out.samples.into_iter().filter_map(|s| s.embedding).collect();
        let c = centroid(&vs).unwrap();
        if c.euclidean_distance_sq(&mu).unwrap().sqrt() <= bound {
            within += 1;
        }
    }

    let z = Normal::standard().inverse_cdf(0.975);
    let predicted = z * z * 0.5 / (0.1 * 0.1);
    let mut stops = Vec::new();
    let mut fixed_error_ok = true;
    for seed in 0..20 {
        let plan = SamplingPlan::fixed_error(0.95, 0.1, seed).with_warmup_and_cap(5, 1000);
        let out = collect_samples(&task, &plan, &llm, &emb).unwrap();
        let e = out.stats.confidence_error.unwrap_or(f64::INFINITY);
        let stop = out.stats.m as f64;
        fixed_error_ok &= out.error_target_met == Some(true)
            && e <= 0.1
            && (stop - predicted).abs() <= 0.2 * predicted;
        stops.push(out.stats.m);
    }
    let secs = start.elapsed().as_secs_f64();
    let lo = stops.iter().min().unwrap();
    let hi = stops.iter().max().unwrap();
    check(
        within >= 99 && fixed_error_ok && secs < 30.0,
        format!(
            "{within}/100 centroids within {bound:.4} of the analytic mean (need 99); \
             fixed-error stops in [{lo}, {hi}] vs predicted {predicted:.1} +-20%, all e <= 0.1: {fixed_error_ok}; {secs:.2}s"
        ),
    )
}

/// Brute-force one-sided Mann-Whitney: U by pair counting, tie-corrected
/// normal approximation with continuity correction.
fn o_mann_whitney_less(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut u = 0.0;
    for a in x {
        for b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let n = n1 + n2;
    let mut counts: HashMap<u64, f64> = HashMap::new();
    for v in x.iter().chain(y) {
        *counts.entry(v.to_bits()).or_default() += 1.0;
    }
    let ties: f64 = counts.values().map(|t| t * t * t - t).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let z = (u - n1 * n2 / 2.0 + 0.5) / var.sqrt();
    (u, Normal::standard().cdf(z))
}

fn c5_equity_shift() -> Verdict {
    let start = Instant::now();
    // high-probability outputs lean toward the first group
    let dist = SimulatedDistribution::new(vec![
        Outcome::new("o1", 0.40, vec![0.9, 0.1, 1.0]).unwrap(),
        Outcome::new("o2", 0.25, vec![0.8, 0.25, 1.0]).unwrap(),
        Outcome::new("o3", 0.15, vec![0.5, 0.5, 1.0]).unwrap(),
        Outcome::new("o4", 0.10, vec![0.45, 0.4, 1.0]).unwrap(),
        Outcome::new("o5", 0.10, vec![0.3, 0.6, 1.0]).unwrap(),
    ])
    .unwrap();
    let emb = SimulatedEmbedder::for_distribution(&dist).unwrap();
    let llm = DistributionGenerator::new(dist);
    let gs = groupset(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let campaign = run_campaign(
        &TaskSpec::freeform("Complete the sentence"),
        &SamplingPlan::fixed_count(5, 0),
        &gs,
        BiasMode::Absolute,
        &llm,
        &emb,
        200,
        0x5eed,
        None,
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("series.csv");
    export_distributions(&campaign.series, &csv, &dir.path().join("summary.json")).unwrap();
    let series = read_series_csv(&csv).unwrap();
    let bw = series.metric_values("bias_weighted");
    let bu = series.metric_values("bias_unweighted");
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rw = mean(&series.metric_values("reliability_weighted"));
    let ru = mean(&series.metric_values("reliability_unweighted"));
    let lib = mann_whitney_less(&bw, &bu).unwrap();
    let (u, p_oracle) = o_mann_whitney_less(&bw, &bu);
    let secs = start.elapsed().as_secs_f64();
    check(
        bw.len() == 200
            && mean(&bw) < mean(&bu)
            && lib.p_value < 0.01
            && (lib.u - u).abs() < 1e-9
            && (lib.p_value - p_oracle).abs() < 1e-9
            && rw >= ru - 0.1
            && secs < 60.0,
        format!(
            "mean bias weighted {:.4} vs unweighted {:.4}; U {:.1} p {:.2e} (oracle {:.2e}, alpha 0.01); \
             reliability weighted {rw:.4} vs unweighted {ru:.4} (slack 0.1); {secs:.2}s",
            mean(&bw),
            mean(&bu),
            lib.u,
            lib.p_value,
            p_oracle
        ),
    )
}

fn c6_argmax() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = Vec::new();
    let mut runs = 0;
    while runs < 1000 {
        let m = rng.random_range(1..=15);
        let d = rng.random_range(2..=6);
        let l = rng.random_range(2..=4);
        let raw: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(&mut rng, d)).collect();
        let groups: Vec<Vec<f64>> = (0..l).map(|_| rand_vec(&mut rng, d)).collect();
        let vs: Vec<EmbeddingVector> = raw.iter().cloned().map(ev).collect();
        let idx: Vec<usize> = (0..m).collect();
        let r = match select_vectors(&vs, &idx, &groupset(&groups), BiasMode::Absolute) {
            Ok(r) => r,
            Err(RequalError::DegenerateCentroid) => continue,
            Err(e) => return Err(e.to_string()),
        };
        runs += 1;
        let rel = &r.reliabilities;
        if rel.iter().any(|x| *x > rel[r.unweighted.position]) {
            violations.push(format!("run {runs}: unweighted not argmax"));
        }
        let b = &r.bias_report.beta;
        let mb = r.minbias.position;
        if b.iter().any(|x| *x < b[mb]) || b[..mb].iter().any(|x| *x == b[mb]) {
            violations.push(format!("run {runs}: minbias not lowest-index argmin"));
        }
        let c = r.centroid_weighted.values();
        let best = o_cos(&raw[r.weighted.position], c);
        if raw.iter().any(|v| o_cos(v, c) > best + 1e-15) {
            violations.push(format!("run {runs}: weighted not argmax"));
        }
        let k = rng.random_range(0.01..=1.0);
        let eq = WeightVector::new(vec![k; m]).unwrap();
        let collapsed = nearest_to(&vs, &weighted_centroid(&vs, &eq).unwrap()).unwrap();
        if collapsed != r.unweighted.position {
            violations.push(format!("run {runs}: equal weights did not collapse"));
        }
    }
    check(
        violations.is_empty(),
        format!("{runs} runs, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

/// Expected Jaccard of two independent uniform k-subsets of an n-pool, by enumeration.
fn enumerated_expectation(n: usize, k: usize) -> f64 {
    fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<HashSet<usize>>) {
        if cur.len() == k {
            out.push(cur.iter().copied().collect());
            return;
        }
        for i in start..n {
            cur.push(i);
            subsets(n, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    subsets(n, k, 0, &mut Vec::new(), &mut all);
    let mut total = 0.0;
    for a in &all {
        for b in &all {
            total += a.intersection(b).count() as f64 / a.union(b).count() as f64;
        }
    }
    total / (all.len() * all.len()) as f64
}

fn c7_order_sensitivity() -> Verdict {
    let names = ["Ava", "Ben", "Cal", "Dee", "Eli", "Fay", "Gus", "Hal"];
    let emb = SimulatedEmbedder::new(16).with_fallback_hashing(true);
    let mut worst: f64 = 0.0;
    let mut unshuffled_ok = true;
    let mut configs = 0;
    for n in 2..=8 {
        for k in 1..=3.min(n - 1) {
            let pool: Vec<String> = names[..n].iter().map(|s| s.to_string()).collect();
            let task = TaskSpec::subset_selection("Choose from {items}", pool);
            let r = order_sensitivity(&task, &PrefixEchoGenerator::new(k), &emb, 500, 70 + n as u64)
                .map_err(|e| e.to_string())?;
            unshuffled_ok &= r.mean_jaccard_unshuffled == 1.0;
            worst = worst.max((r.mean_jaccard_shuffled - enumerated_expectation(n, k)).abs());
            configs += 1;
        }
    }
    check(
        unshuffled_ok && worst <= 0.02,
        format!("{configs} (pool, k) configs x 500 trials; unshuffled all 1.0: {unshuffled_ok}; max |shuffled - enumeration| {worst:.4} (tol 0.02)"),
    )
}

fn c8_metrics() -> Verdict {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<HashSet<String>>();
    let j = jaccard(&set(&["A", "B", "C"]), &set(&["B", "C", "D"]));
    let genders: HashMap<String, Gender> = [
        ("Ann", Gender::Female),
        ("Bea", Gender::Female),
        ("Cy", Gender::Male),
        ("Dan", Gender::Male),
        ("Ed", Gender::Male),
    ]
    .into_iter()
    .map(|(n, g)| (n.to_string(), g))
    .collect();
    let sel = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<String>>();
    let r1 = female_to_male_ratio(&[sel(&["Ann", "Cy", "Dan"]), sel(&["Bea", "Ed", "Ann"])], &genders).unwrap();
    let r2 = female_to_male_ratio(&[sel(&["Ann", "Bea"]), sel(&["Cy"])], &genders).unwrap();
    let no_males = female_to_male_ratio(&[sel(&["Ann"])], &genders);
    let lex = GenderLexicon::bundled();
    let rows = [
        classify_stereotype("she", Gender::Male, &lex) == StereotypeLabel::Anti,
        classify_stereotype("he", Gender::Male, &lex) == StereotypeLabel::Pro,
        classify_stereotype("the patron", Gender::Female, &lex) == StereotypeLabel::Neutral,
        classify_stereotype("she", Gender::Female, &lex) == StereotypeLabel::Pro,
    ];
    check(
        j == 0.5
            && r1 == 1.0
            && r2 == 2.0
            && matches!(no_males, Err(RequalError::DivisionByZeroMales))
            && rows.iter().all(|b| *b),
        format!("jaccard {j}; r_f/m {r1} and {r2} exact; table rows {rows:?}"),
    )
}

fn c9_determinism() -> Verdict {
    let ws = example_workspace();
    let mut details = Vec::new();
    let mut ok = true;
    for config in ["names_run.json", "pronouns_run.json", "order_run.json"] {
        let cfg = ws.path().join(config);
        let mut reports = Vec::new();
        for (run, par) in [(0, "1"), (1, "1"), (2, "4"), (3, "4")] {
            let out = ws.path().join(format!("{config}.{run}.report"));
            let (code, _, err) = cli(&[
                "run", "--config", cfg.to_str().unwrap(), "--seed", "42", "--parallelism", par,
                "--out", out.to_str().unwrap(), "--quiet",
            ]);
            if code != 0 {
                return Err(format!("{config}: exit {code}: {err}"));
            }
            reports.push(fs::read(&out).unwrap());
        }
        let same = reports.windows(2).all(|w| w[0] == w[1]);
        ok &= same;
        details.push(format!("{config}: {} bytes x4 identical={same}", reports[0].len()));
    }
    check(ok, details.join("; "))
}

fn c10_protocol() -> Verdict {
    let fast = |url: &str| HttpConfig {
        timeout_ms: 300,
        backoff_ms: 10,
        ..HttpConfig::new(url)
    };
    let mut notes = Vec::new();

    let slow = StubServer::start(|_, _| StubReply::json(serde_json::json!({"text": "late"})).delayed(Duration::from_millis(1500)));
    let gen = HttpGenerator::new(fast(&slow.url)).unwrap();
    let err = gen.generate(&GenerationRequest::new("x")).unwrap_err();
    let timeout_ok = matches!(err, RequalError::Timeout(_)) && gen.requests_sent() == 3 && exit_code(&err) == EXIT_PROVIDER;
    notes.push(format!("timeout -> {} after {} attempts", variant(&err), gen.requests_sent()));

    let down = StubServer::start(|_, _| StubReply::status(503));
    let gen = HttpGenerator::new(fast(&down.url)).unwrap();
    let err = gen.generate(&GenerationRequest::new("x")).unwrap_err();
    let unavailable_ok = matches!(err, RequalError::ProviderUnavailable(_)) && down.count() == 3 && exit_code(&err) == EXIT_PROVIDER;
    notes.push(format!("503x3 -> {} after {} requests", variant(&err), down.count()));

    let garbage = StubServer::start(|_, _| StubReply::raw("{\"text\": oops"));
    let gen = HttpGenerator::new(fast(&garbage.url)).unwrap();
    let err = gen.generate(&GenerationRequest::new("x")).unwrap_err();
    let emb = HttpEmbedder::new(fast(&garbage.url)).unwrap();
    let err2 = emb.embed(&["a".to_string()]).unwrap_err();
    let malformed_ok = matches!(err, RequalError::MalformedResponse(_))
        && matches!(err2, RequalError::MalformedResponse(_))
        && garbage.count() == 2;
    notes.push(format!("malformed JSON -> {} / {}", variant(&err), variant(&err2)));

    let batch = StubServer::start(|req, _| {
        let k = req.body["input"].as_array().unwrap().len();
        let vs: Vec<Vec<f64>> = (0..k).map(|i| vec![1.0, i as f64]).collect();
        StubReply::json(serde_json::json!({"embeddings": vs, "dimension": 2}))
    });
    let emb = HttpEmbedder::new(fast(&batch.url)).unwrap();
    let texts: Vec<String> = (0..130).map(|i| format!("t{i}")).collect();
    let n = emb.embed(&texts).map(|v| v.len()).unwrap_or(0);
    let sizes: Vec<usize> = batch.requests().iter().map(|r| r.body["input"].as_array().unwrap().len()).collect();
    let batching_ok = n == 130 && sizes == [64, 64, 2];
    notes.push(format!("130 texts -> requests {sizes:?}"));

    check(timeout_ok && unavailable_ok && malformed_ok && batching_ok, notes.join("; "))
}

fn variant(e: &RequalError) -> String {
    format!("{e:?}").split(['(', ' ', '{']).next().unwrap_or_default().to_string()
}
