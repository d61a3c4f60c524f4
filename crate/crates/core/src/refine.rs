//! Compilation filter, score filter and density-based de-duplication.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::EmbeddingVector;
use crate::candidate::Candidate;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("candidate `{0}` has no score")]
    Unscored(String),
    #[error("candidate `{0}` has no render embedding")]
    MissingRenderVec(String),
    #[error("invalid filter config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupScope {
    #[default]
    Batch,
    PerDescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_text_sim: f64,
    pub min_visual_sim: f64,
    /// Percent of min-passing candidates kept, in (0, 100].
    pub keep_top_percentile: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    #[serde(default)]
    pub dedup_scope: DedupScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_text_sim: 0.35,
            min_visual_sim: 0.75,
            keep_top_percentile: 0.5,
            dbscan_eps: 0.25,
            dbscan_min_pts: 2,
            dedup_scope: DedupScope::Batch,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.keep_top_percentile > 0.0 && self.keep_top_percentile <= 100.0) {
            return Err(RefineError::Config(format!(
                "keep_top_percentile {} not in (0, 100]",
                self.keep_top_percentile
            )));
        }
        if self.dbscan_eps.is_nan() || self.dbscan_eps <= 0.0 {
            return Err(RefineError::Config(format!("dbscan_eps {} must be positive", self.dbscan_eps)));
        }
        if self.dbscan_min_pts == 0 {
            return Err(RefineError::Config("dbscan_min_pts must be positive".into()));
        }
        if !self.min_text_sim.is_finite() || !self.min_visual_sim.is_finite() {
            return Err(RefineError::Config("similarity minimums must be finite".into()));
        }
        Ok(())
    }
}

pub fn compilation_filter(candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.into_iter().filter(|c| c.outcome.success).collect()
}

fn score_of(c: &Candidate) -> Result<crate::scoring::RelevanceScore, RefineError> {
    c.score.ok_or_else(|| RefineError::Unscored(c.candidate_id.clone()))
}

/// Drops candidates below the text or (when present) visual minimum.
pub fn min_filter(candidates: Vec<Candidate>, cfg: &FilterConfig) -> Result<Vec<Candidate>, RefineError> {
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s = score_of(&c)?;
        let visual_ok = s.visual_sim.is_none_or(|v| v >= cfg.min_visual_sim);
        if s.text_sim >= cfg.min_text_sim && visual_ok {
            out.push(c);
        }
    }
    Ok(out)
}

/// `ceil(percentile / 100 * n)`, at least one when `n > 0`.
pub fn keep_count(n: usize, percentile: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (percentile / 100.0 * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Best first: combined descending, then candidate_id ascending.
pub fn by_rank(a: &Candidate, b: &Candidate) -> Ordering {
    let (sa, sb) = (a.combined().unwrap_or(f64::NEG_INFINITY), b.combined().unwrap_or(f64::NEG_INFINITY));
    sb.total_cmp(&sa).then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Keeps the top `keep_top_percentile` percent, in rank order.
pub fn percentile_cut(mut candidates: Vec<Candidate>, cfg: &FilterConfig) -> Result<Vec<Candidate>, RefineError> {
    for c in &candidates {
        score_of(c)?;
    }
    candidates.sort_by(by_rank);
    candidates.truncate(keep_count(candidates.len(), cfg.keep_top_percentile));
    Ok(candidates)
}

pub fn score_filter(candidates: Vec<Candidate>, cfg: &FilterConfig) -> Result<Vec<Candidate>, RefineError> {
    percentile_cut(min_filter(candidates, cfg)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Cluster(usize),
    Noise,
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Cluster(c) => s.serialize_u64(*c as u64),
            Label::Noise => s.serialize_str("NOISE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterLabel {
    pub candidate_id: String,
    pub label: Label,
}

/// DBSCAN under cosine distance `1 - cos`. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Clusters are grown
/// from the lowest unvisited core index, so a border point adjacent to
/// several clusters joins the lowest-numbered one.
pub fn dbscan(vectors: &[EmbeddingVector], eps: f64, min_pts: usize) -> Vec<Label> {
    let n = vectors.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    let cos = vectors[i].cosine(&vectors[j]).unwrap_or(-1.0);
                    1.0 - cos <= eps
                })
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        if !core[i] {
            labels[i] = Some(Label::Noise);
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(Label::Cluster(id));
        let mut queue: VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Some(Label::Cluster(_)) => continue,
                Some(Label::Noise) | None => labels[j] = Some(Label::Cluster(id)),
            }
            if core[j] {
                queue.extend(neighbors[j].iter().copied());
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect()
}

fn dedup_group(group: Vec<Candidate>, cfg: &FilterConfig) -> Result<Vec<Candidate>, RefineError> {
    let mut vecs = Vec::with_capacity(group.len());
    for c in &group {
        score_of(c)?;
        vecs.push(
            c.render_vec
                .clone()
                .ok_or_else(|| RefineError::MissingRenderVec(c.candidate_id.clone()))?,
        );
    }
    let labels = dbscan(&vecs, cfg.dbscan_eps, cfg.dbscan_min_pts);
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    let mut keep = vec![false; group.len()];
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::Noise => keep[i] = true,
            Label::Cluster(c) => {
                let entry = best.entry(*c).or_insert(i);
                if by_rank(&group[i], &group[*entry]) == Ordering::Less {
                    *entry = i;
                }
            }
        }
    }
    for i in best.into_values() {
        keep[i] = true;
    }
    Ok(group
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect())
}

/// Keeps the highest-scoring member of each cluster plus every noise
/// point, ordered by candidate_id.
pub fn dedup(candidates: Vec<Candidate>, cfg: &FilterConfig) -> Result<Vec<Candidate>, RefineError> {
    let mut out = match cfg.dedup_scope {
        DedupScope::Batch => dedup_group(candidates, cfg)?,
        DedupScope::PerDescription => {
            let mut groups: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
            for c in candidates {
                groups.entry(c.description_id.clone()).or_default().push(c);
            }
            let mut out = Vec::new();
            for group in groups.into_values() {
                out.extend(dedup_group(group, cfg)?);
            }
            out
        }
    };
    out.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(out)
}

/// Stage sizes of one filter-chain run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCounts {
    pub compiled: usize,
    pub scored: usize,
    pub passed_min: usize,
    pub passed_percentile: usize,
    pub after_dedup: usize,
}

/// The whole chain. Compiling candidates that could not be scored are
/// dropped before the score filter.
pub fn refine(candidates: Vec<Candidate>, cfg: &FilterConfig) -> Result<(Vec<Candidate>, ChainCounts), RefineError> {
    cfg.validate()?;
    let compiled = compilation_filter(candidates);
    let mut counts = ChainCounts {
        compiled: compiled.len(),
        ..ChainCounts::default()
    };
    let scored: Vec<Candidate> = compiled
        .into_iter()
        .filter(|c| c.score.is_some() && c.render_vec.is_some())
        .collect();
    counts.scored = scored.len();
    let passed = min_filter(scored, cfg)?;
    counts.passed_min = passed.len();
    let top = percentile_cut(passed, cfg)?;
    counts.passed_percentile = top.len();
    let out = dedup(top, cfg)?;
    counts.after_dedup = out.len();
    Ok((out, counts))
}

/// One line of a refined dataset shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRecord {
    pub candidate_id: String,
    pub description: String,
    pub source_ref: String,
    pub combined: f64,
    pub text_sim: f64,
    pub visual_sim: Option<f64>,
    pub iteration: u32,
}

impl RefinedRecord {
    pub fn from_candidate(c: &Candidate) -> Result<Self, RefineError> {
        let s = score_of(c)?;
        Ok(RefinedRecord {
            candidate_id: c.candidate_id.clone(),
            description: c.description.clone(),
            source_ref: c.source_ref.key.clone(),
            combined: s.combined,
            text_sim: s.text_sim,
            visual_sim: s.visual_sim,
            iteration: c.iteration,
        })
    }
}

/// Serializes records as JSON Lines.
pub fn shard_bytes(records: &[RefinedRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serialization");
        out.push(b'\n');
    }
    out
}
