//! Fixed-error sampling: keep drawing until the confidence radius of the
//! centroid drops below a target.
//!
//!     cargo run --example fixed_error_run [TARGET]

use requal::providers::simulated::{DistributionGenerator, Outcome, SimulatedDistribution, SimulatedEmbedder};
use requal::{collect_samples, Result, SamplingPlan, TaskSpec};

fn main() -> Result<()> {
    let target: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let dist = SimulatedDistribution::new(vec![
        Outcome::new("hh", 0.25, vec![1.5, 1.5])?,
        Outcome::new("ll", 0.25, vec![0.5, 0.5])?,
        Outcome::new("hl", 0.25, vec![1.5, 0.5])?,
        Outcome::new("lh", 0.25, vec![0.5, 1.5])?,
    ])?;
    let embedder = SimulatedEmbedder::for_distribution(&dist)?;
    let llm = DistributionGenerator::new(dist);

    let plan = SamplingPlan::fixed_error(0.95, target, 3)
        .with_warmup_and_cap(5, 5_000)
        .with_parallelism(4);
    let out = collect_samples(&TaskSpec::freeform("draw one"), &plan, &llm, &embedder)?;
    println!(
        "stopped at m = {} with error {:.4} (target {target}, met: {:?})",
        out.stats.m,
        out.stats.confidence_error.unwrap_or(f64::NAN),
        out.error_target_met
    );
    // sigma is 0.5 per axis, so m lands near z^2 * 0.5 / target^2
    if let Some(sigma) = &out.stats.sigma {
        println!("per-axis std {:?}", sigma.values());
    }
    Ok(())
}
