//! Experiment configuration files.
//!
//! A config is a JSON object. `--set key=value` overrides address nested
//! fields with dotted keys (`de.rng_seed=7`); the value is parsed as JSON
//! when possible and taken as a string otherwise. Relative paths resolve
//! against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ablation::AblationGrid;
use super::HarnessError;
use crate::de::{DEConfig, SoftPrompt};
use crate::respondents::{
    AnswerMode, RemoteEndpointConfig, RemoteRespondent, Respondent, Secret, SyntheticRespondent,
    SyntheticRespondentConfig, AUTH_TOKEN_ENV,
};
use crate::vsm::{DatasetFile, SurveyDataset};

pub const BUILTIN_PLACEHOLDER: &str = "builtin:placeholder";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Ask once more; if still unparseable, use the scale midpoint.
    #[default]
    RetryThenNeutral,
    /// Fail the evaluation (+inf fitness inside the optimizer).
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path(String),
    Inline(DatasetFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantedOptimum {
    Random { seed: u64, half_width: f32 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Synthetic {
        #[serde(default)]
        projection_seed: u64,
        #[serde(default)]
        mode: AnswerMode,
        #[serde(default)]
        planted_optimum: Option<PlantedOptimum>,
    },
    Remote(RemoteBackendConfig),
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_new_tokens() -> u32 {
    16
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_token_env() -> String {
    AUTH_TOKEN_ENV.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteBackendConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub auth_token_env: String,
    #[serde(default)]
    pub skip_handshake: bool,
}

impl RemoteBackendConfig {
    pub fn endpoint(&self) -> RemoteEndpointConfig {
        RemoteEndpointConfig {
            timeout: Duration::from_millis(self.timeout_ms),
            max_retries: self.max_retries,
            auth_token: Secret::from_env(&self.auth_token_env),
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            max_in_flight: self.max_in_flight,
            backoff_base: Duration::from_millis(self.backoff_ms),
            skip_handshake: self.skip_handshake,
            ..RemoteEndpointConfig::new(&self.base_url, &self.model_name)
        }
    }
}

impl BackendConfig {
    /// Instantiates the respondent for prompts of shape `(token_count, embed_dim)`.
    pub fn build(&self, token_count: usize, embed_dim: usize) -> Result<Arc<dyn Respondent>, HarnessError> {
        match self {
            BackendConfig::Synthetic {
                projection_seed,
                mode,
                planted_optimum,
            } => {
                let planted = match planted_optimum {
                    None => None,
                    Some(PlantedOptimum::Random { seed, half_width }) => Some(
                        SyntheticRespondentConfig::random_optimum(*seed, token_count, embed_dim, *half_width),
                    ),
                    Some(PlantedOptimum::File { path }) => Some(SoftPrompt::load(path)?),
                };
                Ok(Arc::new(SyntheticRespondent::new(SyntheticRespondentConfig {
                    projection_seed: *projection_seed,
                    mode: *mode,
                    planted_optimum: planted,
                })))
            }
            BackendConfig::Remote(remote) => Ok(Arc::new(RemoteRespondent::new(remote.endpoint()))),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let BackendConfig::Synthetic {
            planted_optimum: Some(PlantedOptimum::File { path }),
            ..
        } = self
        {
            *path = base.join(&*path);
        }
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Synthetic {
            projection_seed: 0,
            mode: AnswerMode::Continuous,
            planted_optimum: None,
        }
    }
}

fn default_dataset() -> DatasetRef {
    DatasetRef::Path(BUILTIN_PLACEHOLDER.to_string())
}
fn default_token_count() -> usize {
    10
}
fn default_embed_dim() -> usize {
    4096
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_samples() -> usize {
    1
}

/// The config file as written, before paths and the dataset are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetRef,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub de: DEConfig,
    #[serde(default = "default_token_count")]
    pub token_count: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub persona_text: String,
    #[serde(default)]
    pub unparseable_policy: UnparseablePolicy,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_samples")]
    pub samples_per_question: usize,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    /// Defaults to on for deterministic backends.
    #[serde(default)]
    pub cache_fitness: Option<bool>,
    #[serde(default)]
    pub seed_prompts: Vec<PathBuf>,
    /// Seed the population with the last checkpointed best prompt.
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub ablation: Option<AblationGrid>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: SurveyDataset,
    pub backend: BackendConfig,
    pub de: DEConfig,
    pub token_count: usize,
    pub embed_dim: usize,
    pub persona_text: String,
    pub unparseable_policy: UnparseablePolicy,
    pub output_dir: PathBuf,
    pub samples_per_question: usize,
    pub workers: usize,
    pub cache_fitness: Option<bool>,
    pub seed_prompts: Vec<PathBuf>,
    pub resume: bool,
    pub ablation: Option<AblationGrid>,
    /// Override strings applied on load, in order.
    pub overrides: Vec<String>,
    /// The effective configuration, echoed into reports.
    pub resolved: Value,
}

/// Applies `key=value` overrides to a JSON object; later entries win.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<(), HarnessError> {
    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override {entry:?} is not key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(HarnessError::Config(format!("override {entry:?} has an empty key")));
        }
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if !node.is_object() {
                *node = Value::Object(Default::default());
            }
            let map = node.as_object_mut().expect("object");
            if i + 1 == parts.len() {
                map.insert(part.to_string(), value.clone());
                break;
            }
            node = map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads a config file and applies overrides, without validating it.
pub fn read_config_file(path: &Path, overrides: &[String]) -> Result<(ConfigFile, Value), HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut value, overrides)?;
    let file: ConfigFile = serde_json::from_value(value.clone())
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    Ok((file, value))
}

impl ConfigFile {
    fn dataset_file(&self, base: &Path) -> Result<DatasetFile, HarnessError> {
        match &self.dataset {
            DatasetRef::Inline(file) => Ok(file.clone()),
            DatasetRef::Path(p) if p == BUILTIN_PLACEHOLDER => Ok(SurveyDataset::placeholder().to_file()),
            DatasetRef::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| HarnessError::Config(format!("cannot read dataset {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("dataset {}: {e}", path.display())))
            }
        }
    }

    /// Every problem found, as human-readable lines. Empty when valid.
    pub fn diagnostics(&self, base: &Path) -> Vec<String> {
        let mut out = Vec::new();
        match self.dataset_file(base) {
            Ok(file) => out.extend(file.diagnostics().iter().map(ToString::to_string)),
            Err(e) => out.push(e.to_string()),
        }
        out.extend(self.de.diagnostics());
        if self.token_count < 1 {
            out.push("token_count must be ≥ 1".into());
        }
        if self.embed_dim < 1 {
            out.push("embed_dim must be ≥ 1".into());
        }
        if self.samples_per_question < 1 {
            out.push("samples_per_question must be ≥ 1".into());
        }
        if let Some(grid) = &self.ablation {
            out.extend(grid.diagnostics());
        }
        if let BackendConfig::Remote(r) = &self.backend {
            if !(r.temperature >= 0.0) {
                out.push("backend.temperature must be ≥ 0".into());
            }
        }
        out
    }

    pub fn into_experiment(mut self, base: &Path, resolved: Value, overrides: Vec<String>) -> Result<ExperimentConfig, HarnessError> {
        let diags = self.diagnostics(base);
        if !diags.is_empty() {
            return Err(HarnessError::Validation(diags));
        }
        let dataset = SurveyDataset::try_from(self.dataset_file(base)?)?;
        self.backend.resolve_paths(base);
        Ok(ExperimentConfig {
            dataset,
            backend: self.backend,
            de: self.de,
            token_count: self.token_count,
            embed_dim: self.embed_dim,
            persona_text: self.persona_text,
            unparseable_policy: self.unparseable_policy,
            output_dir: base.join(self.output_dir),
            samples_per_question: self.samples_per_question,
            workers: self.workers,
            cache_fitness: self.cache_fitness,
            seed_prompts: self.seed_prompts.iter().map(|p| base.join(p)).collect(),
            resume: self.resume,
            ablation: self.ablation,
            overrides,
            resolved,
        })
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let (file, resolved) = read_config_file(path, overrides)?;
        file.into_experiment(&config_base(path), resolved, overrides.to_vec())
    }

    /// Validation lines for a config file; empty when it is usable.
    pub fn diagnose(path: impl AsRef<Path>, overrides: &[String]) -> Vec<String> {
        let path = path.as_ref();
        match read_config_file(path, overrides) {
            Ok((file, _)) => file.diagnostics(&config_base(path)),
            Err(e) => vec![e.to_string()],
        }
    }

    /// A config built in code: placeholder dataset, synthetic backend,
    /// default DE settings.
    pub fn from_parts(dataset: SurveyDataset, backend: BackendConfig, de: DEConfig, token_count: usize, embed_dim: usize) -> Self {
        let mut cfg = ExperimentConfig {
            dataset,
            backend,
            de,
            token_count,
            embed_dim,
            persona_text: String::new(),
            unparseable_policy: UnparseablePolicy::default(),
            output_dir: default_output_dir(),
            samples_per_question: 1,
            workers: 0,
            cache_fitness: None,
            seed_prompts: Vec::new(),
            resume: false,
            ablation: None,
            overrides: Vec::new(),
            resolved: Value::Null,
        };
        cfg.refresh_resolved();
        cfg
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Respondent>, HarnessError> {
        self.backend.build(self.token_count, self.embed_dim)
    }

    /// Recomputes [`Self::resolved`] from the current field values.
    pub fn refresh_resolved(&mut self) {
        let file = ConfigFile {
            dataset: DatasetRef::Inline(self.dataset.to_file()),
            backend: self.backend.clone(),
            de: self.de.clone(),
            token_count: self.token_count,
            embed_dim: self.embed_dim,
            persona_text: self.persona_text.clone(),
            unparseable_policy: self.unparseable_policy,
            output_dir: self.output_dir.clone(),
            samples_per_question: self.samples_per_question,
            workers: self.workers,
            cache_fitness: self.cache_fitness,
            seed_prompts: self.seed_prompts.clone(),
            resume: self.resume,
            ablation: self.ablation.clone(),
        };
        self.resolved = serde_json::to_value(file).unwrap_or(Value::Null);
    }
}
