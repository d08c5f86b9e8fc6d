//! Repeated trials over the name-selection task, exported as CSV plus a
//! summary with a Mann-Whitney test of the bias shift.
//!
//!     cargo run --example eval_campaign [TRIALS] [OUT_DIR]

use std::path::PathBuf;

use requal::config::{build_embedder, build_generator, load_groups, resolve_task, RunConfig};
use requal::evalkit::export_distributions;
use requal::{run_campaign, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/names_run.json");
    let loaded = RunConfig::load(&path)?;
    let (cfg, base) = (&loaded.config, &loaded.base_dir);
    let resolved = resolve_task(&cfg.task, base)?;
    let llm = build_generator(&cfg.providers, base)?;
    let embedder = build_embedder(&cfg.providers, base)?;
    let groups = load_groups(cfg, base)?.estimate(embedder.as_ref())?;

    let campaign = run_campaign(
        &resolved.task,
        &cfg.plan,
        &groups,
        cfg.bias_mode(),
        llm.as_ref(),
        embedder.as_ref(),
        trials,
        cfg.plan.seed,
        resolved.genders.as_ref(),
    )?;

    let csv = out_dir.join("requal_trials.csv");
    let summary = export_distributions(&campaign.series, &csv, &out_dir.join("requal_summary.json"))?;
    println!("{} trials, {} failed, written to {}", campaign.trials, campaign.failures.len(), csv.display());
    for (name, m) in &summary.metrics {
        println!("{name:<24} mean {:.4}", m.mean);
    }
    if let Some(mw) = summary.bias_shift {
        println!("weighted < unweighted bias: U {:.1}, p {:.3e}", mw.u, mw.p_value);
    }
    if let Some(r) = campaign.pooled_rfm {
        println!("female/male ratio: weighted {:?}, unweighted {:?}", r.weighted, r.unweighted);
    }
    Ok(())
}
