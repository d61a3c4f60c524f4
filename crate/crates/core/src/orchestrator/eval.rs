use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::{build_generator, DescriptionEntry, ModelConfig, RunConfig};
use super::{OrchestratorError, Result};
use crate::adapters::{generate, AdapterError, Generator, SamplingProfile};
use crate::arena::{compile_rate, mean_relevance, Arena, ArenaConfig, EvalEntry, MEAN_RELEVANCE_CONVENTION};
use crate::candidate::{Candidate, SampleInfo, Workbench};
use crate::scoring::PromptTemplates;
use crate::store::write_atomic;

/// Size of the held-out description set the metrics are usually quoted on.
pub const EXPECTED_EVAL_SET_SIZE: usize = 200;

pub struct EvalModel {
    pub config: ModelConfig,
    pub generator: Box<dyn Generator>,
}

impl EvalModel {
    pub fn from_config(config: &ModelConfig, timeout: Duration) -> Result<Self> {
        Ok(EvalModel {
            config: config.clone(),
            generator: build_generator(&config.generator, timeout)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub max_attempts: u32,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { max_attempts: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model_id: String,
    pub params: String,
    /// `false` when the endpoint stayed unreachable; such a model has no
    /// metrics and takes no part in matches.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub compile_rate: Option<f64>,
    pub mean_relevance: Option<f64>,
    pub elo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval_set_size: usize,
    pub k_factor: f64,
    pub initial_rating: f64,
    pub mean_relevance_convention: String,
    pub models: Vec<ModelResult>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    /// Plain-text results table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>8} {:>8}", "Model", "Params", "Compile", "CLIP", "Elo");
        for m in &self.models {
            let name = if m.complete {
                m.model_id.clone()
            } else {
                format!("{} (incomplete)", m.model_id)
            };
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>8} {:>8} {:>8}",
                name,
                m.params,
                cell(m.compile_rate, 2),
                cell(m.mean_relevance, 3),
                cell(m.elo, 0)
            );
        }
        let _ = writeln!(out, "CLIP: mean relevance, {}", self.mean_relevance_convention);
        out
    }
}

/// One evaluation run, stored so the arena and reports can reload it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    #[serde(default)]
    pub iteration: Option<u32>,
    /// The model whose metrics the time series follows.
    #[serde(default)]
    pub tracked_model: Option<String>,
    pub report: EvalReport,
    pub descriptions: BTreeMap<String, String>,
    pub entries: Vec<EvalEntry>,
}

impl EvalSnapshot {
    /// Metrics of the tracked model, else of the first complete one.
    pub fn tracked(&self) -> Option<&ModelResult> {
        match &self.tracked_model {
            Some(id) => self.report.models.iter().find(|m| &m.model_id == id),
            None => self.report.models.iter().find(|m| m.complete),
        }
    }
}

pub fn snapshot_path(store_dir: &Path, iteration: Option<u32>) -> PathBuf {
    let name = match iteration {
        Some(i) => format!("iteration-{i:03}.json"),
        None => "latest.json".to_string(),
    };
    store_dir.join("eval").join(name)
}

pub fn save_eval_snapshot(store_dir: &Path, snapshot: &EvalSnapshot) -> Result<PathBuf> {
    let path = snapshot_path(store_dir, snapshot.iteration);
    let mut json = serde_json::to_vec_pretty(snapshot)?;
    json.push(b'\n');
    write_atomic(&path, &json)?;
    if snapshot.iteration.is_some() {
        write_atomic(&snapshot_path(store_dir, None), &json)?;
    }
    Ok(path)
}

pub fn load_eval_snapshot(path: &Path) -> Result<EvalSnapshot> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn complete_with_retry(
    generator: &dyn Generator,
    prompt: &str,
    profile: &SamplingProfile,
    max_attempts: u32,
) -> Result<String, AdapterError> {
    let mut attempt = 1;
    loop {
        match generate(generator, prompt, profile) {
            Err(e) if e.is_transient() && attempt < max_attempts => {
                log::warn!("{}: attempt {attempt} failed: {e}", profile.profile_id);
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn to_entry(model_id: &str, c: Candidate) -> EvalEntry {
    EvalEntry {
        model_id: model_id.to_string(),
        description_id: c.description_id.clone(),
        source_ref: c.source_ref.clone(),
        combined_score: c.combined(),
        outcome: c.outcome,
        render: c.render,
    }
}

/// Generates one program per (model, description) with each model's own
/// profile and template, scores them, and seeds the arena with the
/// automatic compile matches.
///
/// A model whose endpoint keeps failing is reported incomplete and left
/// out of the arena; the others proceed.
pub fn run_eval(
    cfg: &RunConfig,
    eval_set: &[DescriptionEntry],
    models: &[EvalModel],
    bench: &Workbench<'_>,
    options: &EvalOptions,
) -> Result<(EvalSnapshot, Arena)> {
    if eval_set.is_empty() {
        return Err(OrchestratorError::Precondition("evaluation set is empty".into()));
    }
    if models.is_empty() {
        return Err(OrchestratorError::Precondition("no models configured".into()));
    }
    let mut warnings = Vec::new();
    if eval_set.len() != EXPECTED_EVAL_SET_SIZE {
        let w = format!(
            "evaluation set has {} descriptions, not {EXPECTED_EVAL_SET_SIZE}",
            eval_set.len()
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let descriptions: BTreeMap<String, String> = eval_set
        .iter()
        .map(|d| (d.description_id.clone(), d.description.clone()))
        .collect();
    if descriptions.len() != eval_set.len() {
        return Err(OrchestratorError::Precondition("duplicate description_id in evaluation set".into()));
    }
    let mut gt = BTreeMap::new();
    for d in eval_set {
        let vec = match &d.reference_source {
            Some(src) => bench.reference_vec(src)?,
            None => None,
        };
        gt.insert(d.description_id.clone(), (bench.description_vec(&d.description)?, vec));
    }

    let mut all_entries = Vec::new();
    let mut rows = Vec::new();
    for model in models {
        let mc = &model.config;
        let profile = mc.profile();
        let templates = PromptTemplates {
            generation_template: mc
                .generation_template
                .clone()
                .unwrap_or_else(|| cfg.templates.generation_template.clone()),
            ..cfg.templates.clone()
        };
        let mut entries = Vec::new();
        let mut error = None;
        for d in eval_set {
            let candidate_id = format!("{}/{}", mc.model_id, d.description_id);
            let info = SampleInfo {
                candidate_id: &candidate_id,
                description_id: &d.description_id,
                description: &d.description,
                profile_id: Some(&profile.profile_id),
                iteration: 0,
            };
            let prompt = templates.build_generation_prompt(&d.description)?;
            let c = match complete_with_retry(model.generator.as_ref(), &prompt, &profile, options.max_attempts) {
                Ok(source) => {
                    let (desc_vec, gt_vec) = &gt[&d.description_id];
                    let (mut c, final_source) = bench.compile(&info, &source)?;
                    bench.render(&mut c, &final_source)?;
                    bench.score(&mut c, desc_vec.as_ref(), gt_vec.as_ref())?;
                    c
                }
                Err(e) if e.is_transient() => {
                    log::warn!("model {} marked incomplete: {e}", mc.model_id);
                    error = Some(e.to_string());
                    break;
                }
                Err(e) => {
                    log::warn!("{candidate_id}: generation failed: {e}");
                    Candidate::failed(&candidate_id, &d.description_id, &d.description, 0)
                }
            };
            entries.push(to_entry(&mc.model_id, c));
        }
        let complete = error.is_none();
        rows.push(ModelResult {
            model_id: mc.model_id.clone(),
            params: mc.params.clone(),
            complete,
            error,
            compile_rate: if complete { Some(compile_rate(&entries)?) } else { None },
            mean_relevance: if complete { Some(mean_relevance(&entries)?) } else { None },
            elo: None,
        });
        if complete {
            all_entries.extend(entries);
        }
    }

    let arena = Arena::new(
        all_entries.clone(),
        descriptions.clone(),
        ArenaConfig {
            k_factor: cfg.k_factor,
            initial_rating: cfg.initial_rating,
            seed: options.seed,
            ..ArenaConfig::default()
        },
    )?;
    let table = arena.table();
    for row in rows.iter_mut().filter(|r| r.complete) {
        row.elo = Some(table.rating(&row.model_id));
    }
    let snapshot = EvalSnapshot {
        iteration: None,
        tracked_model: None,
        report: EvalReport {
            eval_set_size: eval_set.len(),
            k_factor: cfg.k_factor,
            initial_rating: cfg.initial_rating,
            mean_relevance_convention: MEAN_RELEVANCE_CONVENTION.into(),
            models: rows,
            warnings,
        },
        descriptions,
        entries: all_entries,
    };
    Ok((snapshot, arena))
}
