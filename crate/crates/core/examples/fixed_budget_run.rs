//! End-to-end run driven by a config file: sample under a fixed budget,
//! score, select, and write the JSON report.
//!
//!     cargo run --example fixed_budget_run [CONFIG] [REPORT]
//!
//! Defaults to `examples/data/pronouns_run.json` and prints the report when
//! no output path is given.

use std::path::PathBuf;

use requal::config::{build_embedder, build_generator, load_groups, resolve_task, RunConfig};
use requal::{run_once, Result, RunReport};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/pronouns_run.json")
    });
    let loaded = RunConfig::load(&path)?;
    let (cfg, base) = (&loaded.config, &loaded.base_dir);

    let task = resolve_task(&cfg.task, base)?.task;
    let llm = build_generator(&cfg.providers, base)?;
    let embedder = build_embedder(&cfg.providers, base)?;
    let groups = load_groups(cfg, base)?.estimate(embedder.as_ref())?;

    let outcome = run_once(&task, &cfg.plan, &groups, cfg.bias_mode(), llm.as_ref(), embedder.as_ref())?;
    println!("weighted:   {}", outcome.weighted_text());
    println!("unweighted: {}", outcome.unweighted_text());
    println!("min-bias:   {}", outcome.minbias_text());

    let report = RunReport::build(&outcome, cfg.plan.seed, Some(cfg.clone()), false, false);
    match args.next() {
        Some(out) => report.write(out.as_ref())?,
        None => print!("{}", report.to_json()?),
    }
    Ok(())
}
