//! Multi-profile variant sampling, ranking, and preference export.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{generate, AdapterError, Generator, SamplingProfile, DEFAULT_MAX_TOKENS, DEFAULT_STOP_TOKEN};
use crate::candidate::{Candidate, CandidateError, SampleInfo, Workbench};
use crate::scoring::{error_free_fraction, PromptTemplates, ScoringError};
use crate::store::{BlobStore, StoreError};

#[derive(Debug, Error)]
pub enum PrefsError {
    #[error("at least two sampling profiles are required, got {0}")]
    TooFewProfiles(usize),
    #[error("duplicate profile id `{0}`")]
    DuplicateProfile(String),
    #[error("every generation failed for description `{description_id}`: {reason}")]
    AllFailed { description_id: String, reason: String },
    #[error("compilable candidate `{0}` has no score")]
    Unscored(String),
    #[error("ranked set is empty")]
    EmptySet,
    #[error(transparent)]
    Candidate(#[from] CandidateError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The ten-profile pack: temperature {0.2, 0.5, 0.8, 1.1} x top-p
/// {0.85, 0.95} at top-k 50, then greedy, then the standard profile.
pub fn default_profile_pack() -> Vec<SamplingProfile> {
    let mut pack = Vec::with_capacity(10);
    for t in [0.2, 0.5, 0.8, 1.1] {
        for p in [0.85, 0.95] {
            pack.push(SamplingProfile {
                profile_id: format!("t{t:.1}-p{p:.2}"),
                temperature: t,
                top_k: 50,
                top_p: p,
                stop_token: DEFAULT_STOP_TOKEN.into(),
                max_tokens: DEFAULT_MAX_TOKENS,
            });
        }
    }
    pack.push(SamplingProfile::greedy());
    pack.push(SamplingProfile::standard());
    pack
}

/// One candidate per profile, ids `{description_id}/{profile_id}`. A
/// generation that fails becomes an empty-source non-compiling candidate;
/// if all of them fail the description is reported as skipped.
#[allow(clippy::too_many_arguments)]
pub fn generate_variants(
    description_id: &str,
    description: &str,
    profiles: &[SamplingProfile],
    generator: &dyn Generator,
    templates: &PromptTemplates,
    bench: &Workbench<'_>,
    gt_vec: Option<&crate::EmbeddingVector>,
    iteration: u32,
) -> Result<Vec<Candidate>, PrefsError> {
    if profiles.len() < 2 {
        return Err(PrefsError::TooFewProfiles(profiles.len()));
    }
    let mut seen = BTreeSet::new();
    for p in profiles {
        if !seen.insert(p.profile_id.as_str()) {
            return Err(PrefsError::DuplicateProfile(p.profile_id.clone()));
        }
    }
    let prompt = templates.build_generation_prompt(description)?;
    let desc_vec = bench.description_vec(description)?;
    let mut out = Vec::with_capacity(profiles.len());
    let mut last_error: Option<AdapterError> = None;
    for profile in profiles {
        let candidate_id = format!("{description_id}/{}", profile.profile_id);
        let source = match generate(generator, &prompt, profile) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("generation failed for {candidate_id}: {e}");
                let mut c = Candidate::failed(&candidate_id, description_id, description, iteration);
                c.profile_id = Some(profile.profile_id.clone());
                out.push(c);
                last_error = Some(e);
                continue;
            }
        };
        let info = SampleInfo {
            candidate_id: &candidate_id,
            description_id,
            description,
            profile_id: Some(&profile.profile_id),
            iteration,
        };
        let (mut c, final_source) = bench.compile(&info, &source)?;
        bench.render(&mut c, &final_source)?;
        bench.score(&mut c, desc_vec.as_ref(), gt_vec)?;
        out.push(c);
    }
    if out.iter().all(|c| c.source_ref.size_bytes == 0) {
        let reason = last_error.map_or_else(|| "no output".to_string(), |e| e.to_string());
        log::warn!("skipping description {description_id}: {reason}");
        return Err(PrefsError::AllFailed {
            description_id: description_id.into(),
            reason,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub candidate_id: String,
    pub compilable: bool,
    /// Combined score when compilable, error-free fraction otherwise.
    pub key: f64,
    pub source_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSet {
    pub description_id: String,
    pub description: String,
    /// Best first.
    pub entries: Vec<RankedEntry>,
}

impl RankedSet {
    pub fn ordered(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.candidate_id.as_str()).collect()
    }
}

fn entry_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.compilable
        .cmp(&a.compilable)
        .then_with(|| b.key.total_cmp(&a.key))
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Compilable before non-compilable; then combined score, or error-free
/// line fraction for non-compilable ones (empty sources count as 0); ties
/// by candidate_id.
pub fn rank_candidates(candidates: &[Candidate]) -> Result<RankedSet, PrefsError> {
    let first = candidates.first().ok_or(PrefsError::EmptySet)?;
    let mut entries = Vec::with_capacity(candidates.len());
    for c in candidates {
        let key = if c.outcome.success {
            c.combined().ok_or_else(|| PrefsError::Unscored(c.candidate_id.clone()))?
        } else if c.outcome.total_lines == 0 {
            0.0
        } else {
            error_free_fraction(&c.outcome)?
        };
        entries.push(RankedEntry {
            candidate_id: c.candidate_id.clone(),
            compilable: c.outcome.success,
            key,
            source_ref: c.source_ref.key.clone(),
        });
    }
    entries.sort_by(entry_order);
    Ok(RankedSet {
        description_id: first.description_id.clone(),
        description: first.description.clone(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    Adjacent,
    TopVsRest,
    AllOrdered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    CompileDominance,
    ScoreGap,
    ErrorFractionGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub description_id: String,
    pub chosen: String,
    pub rejected: String,
    pub margin_kind: MarginKind,
}

fn margin(chosen: &RankedEntry, rejected: &RankedEntry) -> MarginKind {
    match (chosen.compilable, rejected.compilable) {
        (true, false) => MarginKind::CompileDominance,
        (true, true) => MarginKind::ScoreGap,
        _ => MarginKind::ErrorFractionGap,
    }
}

pub fn to_preference_pairs(ranked: &RankedSet, mode: PairMode) -> Vec<PreferencePair> {
    let e = &ranked.entries;
    let n = e.len();
    let index_pairs: Vec<(usize, usize)> = match mode {
        PairMode::Adjacent => (1..n).map(|j| (j - 1, j)).collect(),
        PairMode::TopVsRest => (1..n).map(|j| (0, j)).collect(),
        PairMode::AllOrdered => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
    };
    index_pairs
        .into_iter()
        .map(|(i, j)| PreferencePair {
            description_id: ranked.description_id.clone(),
            chosen: e[i].candidate_id.clone(),
            rejected: e[j].candidate_id.clone(),
            margin_kind: margin(&e[i], &e[j]),
        })
        .collect()
}

/// One preference export line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub description: String,
    pub chosen_source_ref: String,
    pub rejected_source_ref: String,
    pub margin_kind: MarginKind,
}

pub fn preference_records(ranked: &RankedSet, mode: PairMode) -> Vec<PreferenceRecord> {
    let source_of = |id: &str| {
        ranked
            .entries
            .iter()
            .find(|e| e.candidate_id == id)
            .map(|e| e.source_ref.clone())
            .unwrap_or_default()
    };
    to_preference_pairs(ranked, mode)
        .into_iter()
        .map(|p| PreferenceRecord {
            description: ranked.description.clone(),
            chosen_source_ref: source_of(&p.chosen),
            rejected_source_ref: source_of(&p.rejected),
            margin_kind: p.margin_kind,
        })
        .collect()
}

/// One top-output dataset line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopRecord {
    pub description_id: String,
    pub description: String,
    pub candidate_id: String,
    pub source_ref: String,
    pub source: String,
}

/// The best candidate per description; descriptions whose best candidate
/// does not compile are left out.
pub fn export_top_dataset(sets: &[RankedSet], store: &dyn BlobStore) -> Result<Vec<TopRecord>, PrefsError> {
    let mut out = Vec::new();
    for set in sets {
        let top = set.entries.first().ok_or(PrefsError::EmptySet)?;
        if !top.compilable {
            continue;
        }
        let bytes = store.get_blob(&top.source_ref)?;
        out.push(TopRecord {
            description_id: set.description_id.clone(),
            description: set.description.clone(),
            candidate_id: top.candidate_id.clone(),
            source_ref: top.source_ref.clone(),
            source: String::from_utf8_lossy(&bytes).into_owned(),
        });
    }
    Ok(out)
}
