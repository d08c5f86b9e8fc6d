//! Run configuration files and provider resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::equity::{BiasMode, GroupFile};
use crate::error::{RequalError, Result};
use crate::evalkit::{Dataset, Gender};
use crate::providers::http::{HttpConfig, HttpEmbedder, HttpGenerator};
use crate::providers::simulated::SimulatedSpec;
use crate::providers::{EmbeddingProvider, GenerationProvider};
use crate::sampling::{SamplingPlan, TaskKind, TaskSpec, Validator};

pub const SIMULATED_PREFIX: &str = "simulated:";

/// Where the item pool comes from: inline, a plain list file, or a CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSource {
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<String>>,
    /// One entity per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_csv: Option<CsvItems>,
    #[serde(default)]
    pub kind: TaskKind,
    #[serde(default)]
    pub validator: Validator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvItems {
    pub path: String,
    pub name_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSection {
    /// `http(s)://...` or `simulated:PATH`.
    pub generation: String,
    pub embedding: String,
    #[serde(default)]
    pub http: HttpConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasModeName {
    #[default]
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSource,
    pub plan: SamplingPlan,
    pub providers: ProviderSection,
    /// Group definition file; the bundled binary gender groups when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_cache: Option<String>,
    #[serde(default)]
    pub bias_mode: BiasModeName,
    #[serde(default)]
    pub invert_signed_bias: bool,
    /// Output locations do not affect results and are not echoed.
    #[serde(default, skip_serializing)]
    pub output: OutputSection,
    #[serde(default)]
    pub record_timings: bool,
    #[serde(default)]
    pub report_embeddings: bool,
    #[serde(default, skip_serializing)]
    pub quiet: bool,
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Relative paths in the config resolve against this directory.
    pub base_dir: PathBuf,
    /// True when the file gave no seed and one was generated.
    pub seed_generated: bool,
}

fn generated_seed() -> u64 {
    rand::random()
}

impl RunConfig {
    pub fn parse(raw: &str, context: &str) -> Result<(Self, bool)> {
        let mut value: Value =
            serde_json::from_str(raw).map_err(|e| RequalError::json(context, e))?;
        let mut seed_generated = false;
        if let Some(plan) = value.get_mut("plan").and_then(Value::as_object_mut) {
            if !plan.contains_key("seed") {
                plan.insert("seed".into(), Value::from(generated_seed()));
                seed_generated = true;
            }
        }
        let config: Self =
            serde_json::from_value(value).map_err(|e| RequalError::json(context, e))?;
        Ok((config, seed_generated))
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let raw = std::fs::read_to_string(path).map_err(|e| RequalError::io(path, e))?;
        let (config, seed_generated) = Self::parse(&raw, &format!("config {}", path.display()))?;
        Ok(LoadedConfig {
            config,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            seed_generated,
        })
    }

    pub fn bias_mode(&self) -> BiasMode {
        match self.bias_mode {
            BiasModeName::Absolute => BiasMode::Absolute,
            BiasModeName::Signed => BiasMode::Signed {
                invert: self.invert_signed_bias,
            },
        }
    }

    /// Replaces the plan with a fixed budget of `n` unit-cost queries.
    pub fn override_samples(&mut self, n: usize) {
        let mut plan = SamplingPlan::fixed_count(n, self.plan.seed);
        plan.parallelism = self.plan.parallelism;
        plan.shuffle = self.plan.shuffle;
        plan.randomize_params = self.plan.randomize_params;
        plan.params = self.plan.params;
        plan.strict_validation = self.plan.strict_validation;
        plan.max_tokens = self.plan.max_tokens;
        plan.logprobs = self.plan.logprobs;
        self.plan = plan;
    }

    pub fn override_provider(&mut self, provider: &str) {
        self.providers.generation = provider.to_string();
        self.providers.embedding = provider.to_string();
    }
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// The task plus the pool's gender labels when the dataset carries them.
pub struct ResolvedTask {
    pub task: TaskSpec,
    pub genders: Option<std::collections::HashMap<String, Gender>>,
}

pub fn resolve_task(source: &TaskSource, base: &Path) -> Result<ResolvedTask> {
    let given = [
        source.items.is_some(),
        source.items_file.is_some(),
        source.items_csv.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given > 1 {
        return Err(RequalError::Config(
            "give at most one of task.items, task.items_file, task.items_csv".into(),
        ));
    }
    let mut genders = None;
    let items = if let Some(items) = &source.items {
        Some(items.clone())
    } else if let Some(file) = &source.items_file {
        let path = resolve(base, file);
        let raw = std::fs::read_to_string(&path).map_err(|e| RequalError::io(&path, e))?;
        Some(Dataset::from_lines(&raw).names)
    } else if let Some(csv) = &source.items_csv {
        let ds = Dataset::from_csv(
            &resolve(base, &csv.path),
            &csv.name_column,
            csv.gender_column.as_deref(),
        )?;
        if csv.gender_column.is_some() {
            genders = Some(ds.genders);
        }
        Some(ds.names)
    } else {
        None
    };
    let task = TaskSpec {
        template: source.template.clone(),
        items,
        validator: source.validator.clone(),
        kind: source.kind,
    };
    task.validate()?;
    Ok(ResolvedTask { task, genders })
}

pub fn load_groups(config: &RunConfig, base: &Path) -> Result<GroupFile> {
    match &config.groups {
        Some(p) => GroupFile::load(&resolve(base, p)),
        None => Ok(GroupFile::default_gender()),
    }
}

enum ProviderSpec {
    Http(String),
    Simulated(PathBuf),
}

fn parse_provider(provider: &str, base: &Path) -> Result<ProviderSpec> {
    if let Some(path) = provider.strip_prefix(SIMULATED_PREFIX) {
        return Ok(ProviderSpec::Simulated(resolve(base, path)));
    }
    if provider.starts_with("http://") || provider.starts_with("https://") {
        return Ok(ProviderSpec::Http(provider.to_string()));
    }
    Err(RequalError::Config(format!(
        "provider `{provider}` is neither an http(s) URL nor simulated:PATH"
    )))
}

pub fn build_generator(section: &ProviderSection, base: &Path) -> Result<Box<dyn GenerationProvider>> {
    match parse_provider(&section.generation, base)? {
        ProviderSpec::Http(url) => {
            let cfg = HttpConfig {
                endpoint: url,
                ..section.http.clone()
            }
            .with_env_api_key();
            Ok(Box::new(HttpGenerator::new(cfg)?))
        }
        ProviderSpec::Simulated(path) => Ok(SimulatedSpec::load(&path)?.generator()),
    }
}

pub fn build_embedder(section: &ProviderSection, base: &Path) -> Result<Box<dyn EmbeddingProvider>> {
    match parse_provider(&section.embedding, base)? {
        ProviderSpec::Http(url) => {
            let cfg = HttpConfig {
                endpoint: url,
                ..section.http.clone()
            }
            .with_env_api_key();
            Ok(Box::new(HttpEmbedder::new(cfg)?))
        }
        ProviderSpec::Simulated(path) => Ok(Box::new(SimulatedSpec::load(&path)?.embedder()?)),
    }
}
