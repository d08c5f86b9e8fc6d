//! Command-line front end. `main.rs` only forwards to [`run_cli`], so tests
//! drive the same code in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{
    build_embedder, build_generator, load_groups, resolve, resolve_task, LoadedConfig,
    ProviderSection, RunConfig,
};
use crate::equity::{estimate_groups_cached, CacheOutcome, GroupFile, GroupSet};
use crate::error::{RequalError, Result};
use crate::evalkit::{export_distributions, order_sensitivity};
use crate::pipeline::{run_campaign, run_once, RunReport};
use crate::providers::EmbeddingProvider;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_EVAL_FAILURES: i32 = 4;

/// Share of failed trials above which an evaluation exits with [`EXIT_EVAL_FAILURES`].
pub const MAX_FAILED_TRIAL_SHARE: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(name = "requal", version, about = "Equity-aware aggregation of sampled LLM outputs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Report path for `run`, CSV path for `eval`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fixed budget of N unit-cost queries.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// `http(s)://...` or `simulated:PATH`, used for both generation and embedding.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Suppress informational messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, score and select; prints the equity-aware output.
    Run,
    /// Demographic group vectors.
    Groups {
        #[command(subcommand)]
        action: GroupsCommand,
    },
    /// Repeat the run over seeded trials and export metric distributions.
    Eval {
        #[arg(long)]
        trials: usize,
        /// Summary JSON path; defaults next to the CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compare output overlap with and without shuffling the item pool.
    OrderSensitivity {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum GroupsCommand {
    /// Embed seed sentences and cache the group vectors.
    Estimate {
        /// Group definition file; the bundled gender groups when omitted.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &RequalError) -> i32 {
    use RequalError::*;
    if e.is_provider_failure() {
        return EXIT_PROVIDER;
    }
    match e {
        Config(_) | Io { .. } | Json { .. } | Csv(_) | InvalidPlan(_) | InvalidTask(_)
        | InvalidGroupSet(_) | EmptySeedSet(_) | SignedModeRequiresBinaryGroups
        | BudgetBelowSingleQuery { .. } | InvalidLexicon(_) | InvalidDistribution(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_OTHER,
    }
}

struct Console<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    quiet: bool,
}

impl Console<'_> {
    fn info(&mut self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.err, "{}", msg.as_ref());
        }
    }

    fn error(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.err, "error: {}", msg.as_ref());
    }

    fn print(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", msg.as_ref());
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let mut console = Console {
        out,
        err,
        quiet: cli.global.quiet,
    };
    let result = match &cli.command {
        Command::Run => cmd_run(&cli.global, &mut console),
        Command::Groups {
            action: GroupsCommand::Estimate { groups, cache },
        } => cmd_groups_estimate(&cli.global, groups.as_deref(), cache.as_deref(), &mut console),
        Command::Eval { trials, summary } => {
            cmd_eval(&cli.global, *trials, summary.as_deref(), &mut console)
        }
        Command::OrderSensitivity { trials } => {
            cmd_order_sensitivity(&cli.global, *trials, &mut console)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            console.error(e.to_string());
            exit_code(&e)
        }
    }
}

/// Loads `--config` and applies the command-line overrides.
fn load_config(g: &GlobalArgs, console: &mut Console) -> Result<LoadedConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| RequalError::Config("--config is required for this command".into()))?;
    let mut loaded = RunConfig::load(path)?;
    let cfg = &mut loaded.config;
    if let Some(seed) = g.seed {
        cfg.plan.seed = seed;
        loaded.seed_generated = false;
    }
    if let Some(n) = g.samples {
        cfg.override_samples(n);
    }
    if let Some(p) = &g.provider {
        cfg.override_provider(p);
    }
    if let Some(p) = g.parallelism {
        cfg.plan.parallelism = p;
    }
    if cfg.quiet {
        console.quiet = true;
    }
    if loaded.seed_generated {
        console.info(format!("seed {} (generated)", cfg.plan.seed));
    }
    Ok(loaded)
}

fn groups_for(
    cfg: &RunConfig,
    base: &Path,
    embedder: &dyn EmbeddingProvider,
    console: &mut Console,
) -> Result<GroupSet> {
    let file = load_groups(cfg, base)?;
    match &cfg.group_cache {
        Some(cache) => {
            let (gs, outcome) = estimate_groups_cached(&file, embedder, &resolve(base, cache))?;
            console.info(format!("group vectors: cache {}", cache_word(outcome)));
            Ok(gs)
        }
        None => file.estimate(embedder),
    }
}

fn cache_word(o: CacheOutcome) -> &'static str {
    match o {
        CacheOutcome::Hit => "hit",
        CacheOutcome::Miss => "miss",
    }
}

fn cmd_run(g: &GlobalArgs, console: &mut Console) -> Result<i32> {
    let LoadedConfig {
        config, base_dir, ..
    } = load_config(g, console)?;
    let resolved = resolve_task(&config.task, &base_dir)?;
    let llm = build_generator(&config.providers, &base_dir)?;
    let embedder = build_embedder(&config.providers, &base_dir)?;
    let groups = groups_for(&config, &base_dir, embedder.as_ref(), console)?;
    let outcome = run_once(
        &resolved.task,
        &config.plan,
        &groups,
        config.bias_mode(),
        llm.as_ref(),
        embedder.as_ref(),
    )?;
    let c = &outcome.collection;
    console.info(format!(
        "{} valid samples, {} invalid, {} discarded in flight",
        c.stats.m, c.excluded_invalid, c.discarded_in_flight
    ));
    if c.error_target_met == Some(false) {
        console.info("warning: error target not reached before the sample cap");
    }
    let report_path = g
        .out
        .clone()
        .or_else(|| config.output.report.as_ref().map(|p| resolve(&base_dir, p)));
    if let Some(path) = report_path {
        let report = RunReport::build(
            &outcome,
            config.plan.seed,
            Some(config.clone()),
            config.record_timings,
            config.report_embeddings,
        );
        report.write(&path)?;
        console.info(format!("report written to {}", path.display()));
    }
    console.print(outcome.weighted_text());
    Ok(EXIT_OK)
}

fn cmd_groups_estimate(
    g: &GlobalArgs,
    groups: Option<&Path>,
    cache: Option<&Path>,
    console: &mut Console,
) -> Result<i32> {
    let cwd = PathBuf::new();
    let loaded = match &g.config {
        Some(_) => Some(load_config(g, console)?),
        None => None,
    };
    let (section, base) = match (&loaded, &g.provider) {
        (_, Some(p)) => (
            ProviderSection {
                generation: p.clone(),
                embedding: p.clone(),
                http: loaded
                    .as_ref()
                    .map(|l| l.config.providers.http.clone())
                    .unwrap_or_default(),
            },
            cwd.clone(),
        ),
        (Some(l), None) => (l.config.providers.clone(), l.base_dir.clone()),
        (None, None) => {
            return Err(RequalError::Config(
                "groups estimate needs --provider or --config".into(),
            ))
        }
    };
    let file = match (groups, &loaded) {
        (Some(p), _) => GroupFile::load(p)?,
        (None, Some(l)) => load_groups(&l.config, &l.base_dir)?,
        (None, None) => GroupFile::default_gender(),
    };
    let cache_path = match (cache, &loaded) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(l)) if l.config.group_cache.is_some() => {
            resolve(&l.base_dir, l.config.group_cache.as_deref().unwrap_or_default())
        }
        _ => return Err(RequalError::Config("groups estimate needs --cache".into())),
    };
    let embedder = build_embedder(&section, &base)?;
    let (gs, outcome) = estimate_groups_cached(&file, embedder.as_ref(), &cache_path)?;
    console.info(format!(
        "group vectors: cache {}, {} groups of dimension {} in {}",
        cache_word(outcome),
        gs.len(),
        gs.dim(),
        cache_path.display()
    ));
    Ok(EXIT_OK)
}

fn cmd_eval(
    g: &GlobalArgs,
    trials: usize,
    summary: Option<&Path>,
    console: &mut Console,
) -> Result<i32> {
    let loaded = load_config(g, console)?;
    if loaded.seed_generated {
        return Err(RequalError::Config(
            "evaluation needs an explicit seed (plan.seed or --seed)".into(),
        ));
    }
    let LoadedConfig {
        config, base_dir, ..
    } = loaded;
    let csv_path = g
        .out
        .clone()
        .ok_or_else(|| RequalError::Config("eval needs --out for the trial CSV".into()))?;
    let summary_path = summary
        .map(Path::to_path_buf)
        .unwrap_or_else(|| csv_path.with_extension("summary.json"));
    let campaign_path = csv_path.with_extension("campaign.json");

    let resolved = resolve_task(&config.task, &base_dir)?;
    let llm = build_generator(&config.providers, &base_dir)?;
    let embedder = build_embedder(&config.providers, &base_dir)?;
    let groups = groups_for(&config, &base_dir, embedder.as_ref(), console)?;
    let campaign = run_campaign(
        &resolved.task,
        &config.plan,
        &groups,
        config.bias_mode(),
        llm.as_ref(),
        embedder.as_ref(),
        trials,
        config.plan.seed,
        resolved.genders.as_ref(),
    )?;
    for f in &campaign.failures {
        console.info(format!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.error));
    }
    let raw = serde_json::to_string_pretty(&campaign)
        .map_err(|e| RequalError::json("campaign", e))?;
    std::fs::write(&campaign_path, raw + "\n").map_err(|e| RequalError::io(&campaign_path, e))?;
    if !campaign.series.is_empty() {
        let s = export_distributions(&campaign.series, &csv_path, &summary_path)?;
        let mean = |k: &str| s.metrics.get(k).map_or(f64::NAN, |m| m.mean);
        console.print(format!(
            "trials {} ok {} | mean bias weighted {:.6} unweighted {:.6} minbias {:.6}",
            campaign.trials,
            campaign.series.len(),
            mean("bias_weighted"),
            mean("bias_unweighted"),
            mean("bias_minbias"),
        ));
        if let Some(mw) = s.bias_shift {
            console.print(format!("mann-whitney U {:.1} z {:.4} p {:.3e}", mw.u, mw.z, mw.p_value));
        }
    }
    if campaign.failure_rate() > MAX_FAILED_TRIAL_SHARE {
        console.error(format!(
            "{} of {} trials failed",
            campaign.failures.len(),
            campaign.trials
        ));
        return Ok(EXIT_EVAL_FAILURES);
    }
    Ok(EXIT_OK)
}

fn cmd_order_sensitivity(g: &GlobalArgs, trials: usize, console: &mut Console) -> Result<i32> {
    let LoadedConfig {
        config, base_dir, ..
    } = load_config(g, console)?;
    let resolved = resolve_task(&config.task, &base_dir)?;
    let llm = build_generator(&config.providers, &base_dir)?;
    let embedder = build_embedder(&config.providers, &base_dir)?;
    let r = order_sensitivity(
        &resolved.task,
        llm.as_ref(),
        embedder.as_ref(),
        trials,
        config.plan.seed,
    )?;
    console.print(format!("unshuffled_mean_jaccard {:.6}", r.mean_jaccard_unshuffled));
    console.print(format!("shuffled_mean_jaccard {:.6}", r.mean_jaccard_shuffled));
    Ok(EXIT_OK)
}
