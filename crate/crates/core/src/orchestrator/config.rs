use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::adapters::{
    Compiler, Embedder, ExternalCompiler, Generator, HashEmbedder, HttpGenerator, MiniUiCompiler,
    MiniUiRenderer, Renderer, SamplingProfile, ScriptedGenerator, DEFAULT_EMBEDDING_DIM, DEFAULT_MAX_TOKENS,
    DEFAULT_STOP_TOKEN,
};
use crate::refine::{DedupScope, FilterConfig};
use crate::repair::{default_rules, load_rules, RepairRule, DEFAULT_MAX_ROUNDS};
use crate::scoring::PromptTemplates;

/// One line of a description source: `{description_id, description,
/// reference_source?}`. `reference_source` is a ground-truth program whose
/// render stands in for the reference screenshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub description_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_source: Option<String>,
}

pub fn load_descriptions(path: &Path) -> Result<Vec<DescriptionEntry>, OrchestratorError> {
    let text = fs::read_to_string(path)
        .map_err(|e| OrchestratorError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| OrchestratorError::Config(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// An evaluated model: generator endpoint plus its own decoding settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(default)]
    pub params: String,
    pub generator: String,
    #[serde(default)]
    pub generation_template: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub top_k: Option<u32>,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub stop_token: Option<String>,
}

impl ModelConfig {
    pub fn profile(&self) -> SamplingProfile {
        let base = SamplingProfile::standard();
        SamplingProfile {
            profile_id: self.model_id.clone(),
            temperature: self.temperature.unwrap_or(base.temperature),
            top_k: self.top_k.unwrap_or(base.top_k),
            top_p: self.top_p.unwrap_or(base.top_p),
            stop_token: self.stop_token.clone().unwrap_or(base.stop_token),
            max_tokens: self.max_tokens.unwrap_or(base.max_tokens),
        }
    }
}

/// Settings that may change from one iteration to the next.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationOverride {
    pub samples_per_iteration: Option<usize>,
    pub source_weights: Option<Vec<f64>>,
    pub min_text_sim: Option<f64>,
    pub min_visual_sim: Option<f64>,
    pub percentile_thresh: Option<f64>,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub top_p: Option<f64>,
}

fn d_store() -> PathBuf {
    PathBuf::from("store")
}
fn d_samples() -> usize {
    1000
}
fn d_true() -> bool {
    true
}
fn d_workers() -> usize {
    4
}
fn d_visibility() -> u64 {
    60_000
}
fn d_attempts() -> u32 {
    3
}
fn d_compiler() -> String {
    "miniui".into()
}
fn d_ext() -> String {
    "swift".into()
}
fn d_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}
fn d_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}
fn d_gen_timeout() -> u64 {
    120_000
}
fn d_temperature() -> f64 {
    0.2
}
fn d_top_k() -> u32 {
    70
}
fn d_top_p() -> f64 {
    0.85
}
fn d_stop() -> String {
    DEFAULT_STOP_TOKEN.into()
}
fn d_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn d_min_text() -> f64 {
    0.35
}
fn d_min_visual() -> f64 {
    0.75
}
fn d_percentile() -> f64 {
    0.5
}
fn d_eps() -> f64 {
    0.25
}
fn d_min_pts() -> usize {
    2
}
fn d_k() -> f64 {
    crate::arena::DEFAULT_K_FACTOR
}
fn d_initial() -> f64 {
    crate::arena::DEFAULT_INITIAL_RATING
}

/// The run configuration file. Keys are flat and mirror the hyperparameter
/// names (`top_k`, `top_p`, `temperature`, `min_text_sim`,
/// `min_visual_sim`, `percentile_thresh`, `dbscan_eps`). Relative paths are
/// resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_store")]
    pub store_dir: PathBuf,
    #[serde(default)]
    pub description_sources: Vec<PathBuf>,
    #[serde(default)]
    pub source_weights: Vec<f64>,
    #[serde(default = "d_samples")]
    pub samples_per_iteration: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sample_with_replacement: bool,
    #[serde(default = "d_workers")]
    pub workers: usize,
    #[serde(default = "d_visibility")]
    pub visibility_timeout_ms: u64,
    #[serde(default = "d_attempts")]
    pub max_attempts: u32,
    #[serde(default)]
    pub wall_clock_cap_ms: Option<u64>,

    /// `scripted:<fixture.jsonl>` or an `http(s)://` completion URL.
    #[serde(default)]
    pub generator: String,
    #[serde(default = "d_gen_timeout")]
    pub generator_timeout_ms: u64,
    /// `miniui` or `external:<command line>`.
    #[serde(default = "d_compiler")]
    pub compiler: String,
    #[serde(default = "d_ext")]
    pub compiler_extension: String,
    #[serde(default = "d_dim")]
    pub embedding_dim: usize,

    #[serde(default = "d_true")]
    pub repair: bool,
    #[serde(default)]
    pub repair_rules: Option<PathBuf>,
    #[serde(default = "d_rounds")]
    pub max_repair_rounds: u32,

    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default = "d_top_k")]
    pub top_k: u32,
    #[serde(default = "d_top_p")]
    pub top_p: f64,
    #[serde(default = "d_stop")]
    pub stop_token: String,
    #[serde(default = "d_max_tokens")]
    pub max_tokens: u32,

    #[serde(default = "d_min_text")]
    pub min_text_sim: f64,
    #[serde(default = "d_min_visual")]
    pub min_visual_sim: f64,
    /// Percent of min-passing candidates kept.
    #[serde(default = "d_percentile")]
    pub percentile_thresh: f64,
    #[serde(default = "d_eps")]
    pub dbscan_eps: f64,
    #[serde(default = "d_min_pts")]
    pub dbscan_min_pts: usize,
    #[serde(default)]
    pub dedup_scope: DedupScope,

    #[serde(default)]
    pub templates: PromptTemplates,

    #[serde(default)]
    pub eval_set: Option<PathBuf>,
    #[serde(default)]
    pub eval_repair: bool,
    #[serde(default = "d_k")]
    pub k_factor: f64,
    #[serde(default = "d_initial")]
    pub initial_rating: f64,
    #[serde(default)]
    pub models: Vec<ModelConfig>,

    #[serde(default)]
    pub iteration_overrides: BTreeMap<String, IterationOverride>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, OrchestratorError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_dir);
        self.description_sources.iter_mut().for_each(fix);
        if let Some(p) = self.repair_rules.as_mut() {
            fix(p);
        }
        if let Some(p) = self.eval_set.as_mut() {
            fix(p);
        }
        for spec in std::iter::once(&mut self.generator).chain(self.models.iter_mut().map(|m| &mut m.generator)) {
            if let Some(rest) = spec.strip_prefix("scripted:") {
                let p = Path::new(rest);
                if p.is_relative() {
                    *spec = format!("scripted:{}", base.join(p).display());
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        self.templates.validate()?;
        if !self.source_weights.is_empty() && self.source_weights.len() != self.description_sources.len() {
            return Err(OrchestratorError::Config(format!(
                "{} source_weights for {} description_sources",
                self.source_weights.len(),
                self.description_sources.len()
            )));
        }
        if self.source_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(OrchestratorError::Config("source_weights must be finite and non-negative".into()));
        }
        if self.workers == 0 {
            return Err(OrchestratorError::Config("workers must be at least 1".into()));
        }
        if self.visibility_timeout_ms == 0 || self.max_attempts == 0 {
            return Err(OrchestratorError::Config(
                "visibility_timeout_ms and max_attempts must be positive".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(OrchestratorError::Config("embedding_dim must be positive".into()));
        }
        for key in self.iteration_overrides.keys() {
            key.parse::<u32>().map_err(|_| {
                OrchestratorError::Config(format!("iteration_overrides key `{key}` is not an iteration number"))
            })?;
        }
        let mut ids = std::collections::BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.model_id.as_str()) {
                return Err(OrchestratorError::Config(format!("duplicate model_id `{}`", m.model_id)));
            }
            m.profile().validate()?;
            if let Some(t) = &m.generation_template {
                PromptTemplates {
                    generation_template: t.clone(),
                    ..self.templates.clone()
                }
                .validate()?;
            }
        }
        self.profile_for(0).validate()?;
        self.filter_for(0).validate()?;
        Ok(())
    }

    fn overrides(&self, iteration: u32) -> IterationOverride {
        self.iteration_overrides
            .get(&iteration.to_string())
            .cloned()
            .unwrap_or_default()
    }

    pub fn samples_for(&self, iteration: u32) -> usize {
        self.overrides(iteration).samples_per_iteration.unwrap_or(self.samples_per_iteration)
    }

    pub fn weights_for(&self, iteration: u32) -> Vec<f64> {
        let w = self.overrides(iteration).source_weights.unwrap_or_else(|| self.source_weights.clone());
        if w.is_empty() {
            vec![1.0; self.description_sources.len()]
        } else {
            w
        }
    }

    pub fn profile_for(&self, iteration: u32) -> SamplingProfile {
        let o = self.overrides(iteration);
        SamplingProfile {
            profile_id: "default".into(),
            temperature: o.temperature.unwrap_or(self.temperature),
            top_k: o.top_k.unwrap_or(self.top_k),
            top_p: o.top_p.unwrap_or(self.top_p),
            stop_token: self.stop_token.clone(),
            max_tokens: self.max_tokens,
        }
    }

    pub fn filter_for(&self, iteration: u32) -> FilterConfig {
        let o = self.overrides(iteration);
        FilterConfig {
            min_text_sim: o.min_text_sim.unwrap_or(self.min_text_sim),
            min_visual_sim: o.min_visual_sim.unwrap_or(self.min_visual_sim),
            keep_top_percentile: o.percentile_thresh.unwrap_or(self.percentile_thresh),
            dbscan_eps: o.dbscan_eps.unwrap_or(self.dbscan_eps),
            dbscan_min_pts: o.dbscan_min_pts.unwrap_or(self.dbscan_min_pts),
            dedup_scope: self.dedup_scope,
        }
    }

    pub fn rules(&self) -> Result<Vec<RepairRule>, OrchestratorError> {
        if !self.repair {
            return Ok(Vec::new());
        }
        match &self.repair_rules {
            Some(path) => Ok(load_rules(path)?),
            None => Ok(default_rules()),
        }
    }
}

/// Builds a generator from `scripted:<path>` or an http(s) URL.
pub fn build_generator(spec: &str, timeout: Duration) -> Result<Box<dyn Generator>, OrchestratorError> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        return Ok(Box::new(ScriptedGenerator::from_fixture_file(path)?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpGenerator::new(spec, timeout)?));
    }
    Err(OrchestratorError::Config(format!(
        "generator `{spec}` must be `scripted:<file>` or an http(s) URL"
    )))
}

pub fn build_compiler(spec: &str, extension: &str) -> Result<Box<dyn Compiler>, OrchestratorError> {
    if spec == "miniui" {
        return Ok(Box::new(MiniUiCompiler));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        let c = ExternalCompiler::from_command_line(cmd, extension)?;
        c.check_available()?;
        return Ok(Box::new(c));
    }
    Err(OrchestratorError::Config(format!(
        "compiler `{spec}` must be `miniui` or `external:<command>`"
    )))
}

/// The four adapters one run uses.
pub struct AdapterSet {
    pub generator: Box<dyn Generator>,
    pub compiler: Box<dyn Compiler>,
    pub renderer: Box<dyn Renderer>,
    pub embedder: Box<dyn Embedder>,
}

impl AdapterSet {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, OrchestratorError> {
        Ok(AdapterSet {
            generator: build_generator(&cfg.generator, Duration::from_millis(cfg.generator_timeout_ms))?,
            compiler: build_compiler(&cfg.compiler, &cfg.compiler_extension)?,
            renderer: Box::new(MiniUiRenderer),
            embedder: Box::new(HashEmbedder::new(cfg.embedding_dim)),
        })
    }
}
