//! Evaluation metrics, Elo ratings, and the blinded pairwise-rating service.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{CompileOutcome, RenderArtifact};
use crate::store::{BlobRef, Clock, Dataset, DatasetRecord, StoreError, SystemClock};

pub const DEFAULT_K_FACTOR: f64 = 32.0;
pub const DEFAULT_INITIAL_RATING: f64 = 1000.0;
pub const DEFAULT_PAIR_TTL_MS: u64 = 30 * 60 * 1000;

pub const INSTRUCTIONS: &str = "Select the UI screenshot that better matches the description. All images and icons have been replaced with the same placeholder image, and the screens may also contain some placeholder text. Focus on the overall quality of the structure and layout when selecting the preferred screen.";

pub const MEAN_RELEVANCE_CONVENTION: &str = "non-compiling entries score 0";

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("a model cannot play itself (`{0}`)")]
    SameModel(String),
    #[error("entries belong to different descriptions: `{0}` vs `{1}`")]
    DescriptionMismatch(String, String),
    #[error("no entries")]
    NoEntries,
    #[error("pair `{0}` is not outstanding")]
    NotFound(String),
    #[error("pair `{0}` was already judged")]
    Conflict(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub fn expected_score(r_a: f64, r_b: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((r_b - r_a) / 400.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOutcome {
    AWins,
    BWins,
    Tie,
}

impl MatchOutcome {
    fn score_a(self) -> f64 {
        match self {
            MatchOutcome::AWins => 1.0,
            MatchOutcome::BWins => 0.0,
            MatchOutcome::Tie => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSource {
    Human,
    AutoCompile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    pub description_id: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: MatchOutcome,
    pub source: MatchSource,
    pub rater_id: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl MatchRecord {
    /// A match between two models outside any description or rater.
    pub fn synthetic(match_id: impl Into<String>, a: &str, b: &str, outcome: MatchOutcome) -> Self {
        MatchRecord {
            match_id: match_id.into(),
            description_id: String::new(),
            model_a: a.into(),
            model_b: b.into(),
            outcome,
            source: MatchSource::Human,
            rater_id: None,
            timestamp: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub ratings: BTreeMap<String, f64>,
    pub matches: BTreeMap<String, u64>,
    pub k_factor: f64,
    pub initial_rating: f64,
}

impl Default for EloTable {
    fn default() -> Self {
        EloTable::new(DEFAULT_K_FACTOR, DEFAULT_INITIAL_RATING)
    }
}

impl EloTable {
    pub fn new(k_factor: f64, initial_rating: f64) -> Self {
        EloTable {
            ratings: BTreeMap::new(),
            matches: BTreeMap::new(),
            k_factor,
            initial_rating,
        }
    }

    pub fn ensure(&mut self, model: &str) {
        if !self.ratings.contains_key(model) {
            self.ratings.insert(model.to_string(), self.initial_rating);
        }
        if !self.matches.contains_key(model) {
            self.matches.insert(model.to_string(), 0);
        }
    }

    pub fn rating(&self, model: &str) -> f64 {
        self.ratings.get(model).copied().unwrap_or(self.initial_rating)
    }

    /// `d = K (s_a - E(r_a, r_b))`; `a` gains `d` and `b` loses it.
    pub fn update(&mut self, m: &MatchRecord) -> Result<(), ArenaError> {
        if m.model_a == m.model_b {
            return Err(ArenaError::SameModel(m.model_a.clone()));
        }
        self.ensure(&m.model_a);
        self.ensure(&m.model_b);
        let (ra, rb) = (self.rating(&m.model_a), self.rating(&m.model_b));
        let d = self.k_factor * (m.outcome.score_a() - expected_score(ra, rb));
        for (model, r) in [(&m.model_a, ra + d), (&m.model_b, rb - d)] {
            if let Some(slot) = self.ratings.get_mut(model) {
                *slot = r;
            }
            if let Some(n) = self.matches.get_mut(model) {
                *n += 1;
            }
        }
        Ok(())
    }

    /// Models ordered best first (rating descending, then id).
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self.ratings.iter().map(|(m, r)| (m.clone(), *r)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }
}

/// Applies `log` in order to a fresh table.
pub fn replay(log: &[MatchRecord], k_factor: f64, initial_rating: f64) -> Result<EloTable, ArenaError> {
    let mut table = EloTable::new(k_factor, initial_rating);
    for m in log {
        table.update(m)?;
    }
    Ok(table)
}

/// Mean ratings over `shuffles` random orderings of `log`.
pub fn replay_shuffled_average(
    log: &[MatchRecord],
    shuffles: usize,
    seed: u64,
    k_factor: f64,
    initial_rating: f64,
) -> Result<BTreeMap<String, f64>, ArenaError> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order = Vec::with_capacity(log.len());
    for m in log {
        if m.model_a == m.model_b {
            return Err(ArenaError::SameModel(m.model_a.clone()));
        }
        let next = index.len();
        let a = *index.entry(&m.model_a).or_insert(next);
        let next = index.len();
        let b = *index.entry(&m.model_b).or_insert(next);
        order.push((a, b, m.outcome.score_a()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut totals = vec![0.0; index.len()];
    let shuffles = shuffles.max(1);
    for _ in 0..shuffles {
        order.shuffle(&mut rng);
        let mut ratings = vec![initial_rating; index.len()];
        for &(a, b, s) in &order {
            let d = k_factor * (s - expected_score(ratings[a], ratings[b]));
            ratings[a] += d;
            ratings[b] -= d;
        }
        for (t, r) in totals.iter_mut().zip(ratings) {
            *t += r;
        }
    }
    Ok(index
        .into_iter()
        .map(|(m, i)| (m.to_string(), totals[i] / shuffles as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub model_id: String,
    pub description_id: String,
    pub source_ref: BlobRef,
    pub outcome: CompileOutcome,
    pub render: Option<RenderArtifact>,
    pub combined_score: Option<f64>,
}

pub fn compile_rate(entries: &[EvalEntry]) -> Result<f64, ArenaError> {
    if entries.is_empty() {
        return Err(ArenaError::NoEntries);
    }
    let ok = entries.iter().filter(|e| e.outcome.success).count();
    Ok(ok as f64 / entries.len() as f64)
}

/// Mean combined score over all entries; non-compiling entries score 0.
pub fn mean_relevance(entries: &[EvalEntry]) -> Result<f64, ArenaError> {
    if entries.is_empty() {
        return Err(ArenaError::NoEntries);
    }
    let total: f64 = entries
        .iter()
        .filter(|e| e.outcome.success)
        .map(|e| e.combined_score.unwrap_or(0.0))
        .sum();
    Ok(total / entries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AutoOutcome {
    Match(MatchRecord),
    NeedsHuman,
}

/// A failed compile loses automatically; two failures tie.
pub fn auto_outcome(a: &EvalEntry, b: &EvalEntry) -> Result<AutoOutcome, ArenaError> {
    if a.description_id != b.description_id {
        return Err(ArenaError::DescriptionMismatch(
            a.description_id.clone(),
            b.description_id.clone(),
        ));
    }
    if a.model_id == b.model_id {
        return Err(ArenaError::SameModel(a.model_id.clone()));
    }
    let outcome = match (a.outcome.success, b.outcome.success) {
        (true, true) => return Ok(AutoOutcome::NeedsHuman),
        (true, false) => MatchOutcome::AWins,
        (false, true) => MatchOutcome::BWins,
        (false, false) => MatchOutcome::Tie,
    };
    Ok(AutoOutcome::Match(MatchRecord {
        match_id: format!("auto:{}:{}:{}", a.description_id, a.model_id, b.model_id),
        description_id: a.description_id.clone(),
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        outcome,
        source: MatchSource::AutoCompile,
        rater_id: None,
        timestamp: 0,
    }))
}

/// What a rater sees. Carries no model identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedPair {
    pub pair_id: String,
    pub description: String,
    pub render_a_ref: String,
    pub render_b_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Left,
    Right,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_id: String,
    pub rating: f64,
    pub matches: u64,
    pub compile_rate: f64,
    pub mean_relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub k_factor: f64,
    pub initial_rating: f64,
    pub mean_relevance_convention: String,
    pub models: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArenaConfig {
    pub k_factor: f64,
    pub initial_rating: f64,
    pub seed: u64,
    pub pair_ttl_ms: u64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            k_factor: DEFAULT_K_FACTOR,
            initial_rating: DEFAULT_INITIAL_RATING,
            seed: 0,
            pair_ttl_ms: DEFAULT_PAIR_TTL_MS,
        }
    }
}

type PairKey = (String, String, String);

#[derive(Debug, Clone)]
struct Outstanding {
    rater: String,
    key: PairKey,
    left_is_a: bool,
    payload: BlindedPair,
    issued_ms: u64,
}

struct State {
    table: EloTable,
    log: Vec<MatchRecord>,
    rng: ChaCha8Rng,
    outstanding: HashMap<String, Outstanding>,
    by_rater: HashMap<String, String>,
    judged: HashSet<(String, PairKey)>,
    closed: HashSet<String>,
    sink: Option<Dataset>,
}

/// The pairing service. Automatic compile matches are recorded when the
/// arena is built; human judgments arrive through [`Arena::submit_preference`].
pub struct Arena {
    cfg: ArenaConfig,
    clock: Arc<dyn Clock>,
    descriptions: BTreeMap<String, String>,
    /// description_id -> model pairs (a < b) that both compile.
    judgeable: Vec<(String, Vec<(String, String)>)>,
    entries: BTreeMap<String, Vec<EvalEntry>>,
    renders: HashMap<String, RenderArtifact>,
    state: Mutex<State>,
}

impl Arena {
    /// `descriptions` maps description_id to its text.
    pub fn new(
        entries: Vec<EvalEntry>,
        descriptions: BTreeMap<String, String>,
        cfg: ArenaConfig,
    ) -> Result<Self, ArenaError> {
        Self::with_clock(entries, descriptions, cfg, Arc::new(SystemClock))
    }

    pub fn with_clock(
        entries: Vec<EvalEntry>,
        descriptions: BTreeMap<String, String>,
        cfg: ArenaConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ArenaError> {
        let mut by_desc: BTreeMap<String, BTreeMap<String, EvalEntry>> = BTreeMap::new();
        let mut by_model: BTreeMap<String, Vec<EvalEntry>> = BTreeMap::new();
        let mut renders = HashMap::new();
        for e in entries {
            if let Some(r) = &e.render {
                renders.insert(r.blob.key.clone(), r.clone());
            }
            by_model.entry(e.model_id.clone()).or_default().push(e.clone());
            by_desc.entry(e.description_id.clone()).or_default().insert(e.model_id.clone(), e);
        }
        let mut table = EloTable::new(cfg.k_factor, cfg.initial_rating);
        for model in by_model.keys() {
            table.ensure(model);
        }
        let mut log = Vec::new();
        let mut judgeable = Vec::new();
        for (desc, models) in &by_desc {
            let list: Vec<&EvalEntry> = models.values().collect();
            let mut pairs = Vec::new();
            for i in 0..list.len() {
                for j in i + 1..list.len() {
                    match auto_outcome(list[i], list[j])? {
                        AutoOutcome::Match(m) => {
                            table.update(&m)?;
                            log.push(m);
                        }
                        AutoOutcome::NeedsHuman => {
                            if list[i].render.is_some() && list[j].render.is_some() {
                                pairs.push((list[i].model_id.clone(), list[j].model_id.clone()));
                            }
                        }
                    }
                }
            }
            if !pairs.is_empty() && descriptions.contains_key(desc) {
                judgeable.push((desc.clone(), pairs));
            }
        }
        let state = State {
            table,
            log,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            outstanding: HashMap::new(),
            by_rater: HashMap::new(),
            judged: HashSet::new(),
            closed: HashSet::new(),
            sink: None,
        };
        Ok(Arena {
            cfg,
            clock,
            descriptions,
            judgeable,
            entries: by_model,
            renders,
            state: Mutex::new(state),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Persists matches to `dataset`. Matches already there are taken as
    /// the authoritative history and replayed; automatic matches missing
    /// from it are appended.
    pub fn attach_log(&self, dataset: Dataset) -> Result<(), ArenaError> {
        let mut st = self.lock();
        let mut history: Vec<MatchRecord> = Vec::new();
        for rec in dataset.read_all()? {
            if let Some(m) = rec.get::<MatchRecord>("match")? {
                history.push(m);
            }
        }
        let known: HashSet<String> = history.iter().map(|m| m.match_id.clone()).collect();
        for m in st.log.iter().filter(|m| !known.contains(&m.match_id)) {
            dataset.append_if_absent(&match_row(m)?)?;
            history.push(m.clone());
        }
        let mut table = EloTable::new(self.cfg.k_factor, self.cfg.initial_rating);
        for model in self.entries.keys() {
            table.ensure(model);
        }
        for m in &history {
            table.update(m)?;
            if let (MatchSource::Human, Some(rater)) = (m.source, &m.rater_id) {
                st.judged.insert((rater.clone(), canonical(&m.description_id, &m.model_a, &m.model_b)));
            }
        }
        st.table = table;
        st.log = history;
        st.sink = Some(dataset);
        Ok(())
    }

    pub fn instructions(&self) -> &'static str {
        INSTRUCTIONS
    }

    pub fn render(&self, key: &str) -> Option<&RenderArtifact> {
        self.renders.get(key)
    }

    pub fn log(&self) -> Vec<MatchRecord> {
        self.lock().log.clone()
    }

    pub fn table(&self) -> EloTable {
        self.lock().table.clone()
    }

    fn payload_for(&self, key: &PairKey, left_is_a: bool, pair_id: String) -> BlindedPair {
        let (desc, a, b) = key;
        let render_of = |model: &str| {
            self.entries[model]
                .iter()
                .find(|e| &e.description_id == desc)
                .and_then(|e| e.render.as_ref())
                .map(|r| r.blob.key.clone())
                .unwrap_or_default()
        };
        let (left, right) = if left_is_a { (a, b) } else { (b, a) };
        BlindedPair {
            pair_id,
            description: self.descriptions[desc].clone(),
            render_a_ref: render_of(left),
            render_b_ref: render_of(right),
        }
    }

    /// Serves a pair the rater has not judged, or `None` once every
    /// judgeable pair has been judged by them. An unanswered pair is served
    /// again until it expires.
    pub fn next_pair(&self, rater: &str) -> Option<BlindedPair> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        if let Some(id) = st.by_rater.get(rater).cloned() {
            match st.outstanding.get(&id) {
                Some(o) if now < o.issued_ms + self.cfg.pair_ttl_ms => return Some(o.payload.clone()),
                _ => {
                    st.outstanding.remove(&id);
                    st.by_rater.remove(rater);
                }
            }
        }
        let open: Vec<(&String, Vec<&(String, String)>)> = self
            .judgeable
            .iter()
            .map(|(desc, pairs)| {
                let left: Vec<&(String, String)> = pairs
                    .iter()
                    .filter(|(a, b)| !st.judged.contains(&(rater.to_string(), (desc.clone(), a.clone(), b.clone()))))
                    .collect();
                (desc, left)
            })
            .filter(|(_, left)| !left.is_empty())
            .collect();
        if open.is_empty() {
            return None;
        }
        let (desc, pairs) = &open[st.rng.random_range(0..open.len())];
        let (a, b) = pairs[st.rng.random_range(0..pairs.len())];
        let key = ((*desc).clone(), a.clone(), b.clone());
        let left_is_a = st.rng.random_bool(0.5);
        let pair_id = format!("{:032x}", st.rng.random::<u128>());
        let payload = self.payload_for(&key, left_is_a, pair_id.clone());
        st.outstanding.insert(
            pair_id.clone(),
            Outstanding {
                rater: rater.to_string(),
                key,
                left_is_a,
                payload: payload.clone(),
                issued_ms: now,
            },
        );
        st.by_rater.insert(rater.to_string(), pair_id);
        Some(payload)
    }

    /// Records a judgment and updates ratings in one step.
    pub fn submit_preference(&self, pair_id: &str, choice: Choice, rater: &str) -> Result<MatchRecord, ArenaError> {
        let now = self.clock.now_ms();
        let mut st = self.lock();
        if st.closed.contains(pair_id) {
            return Err(ArenaError::Conflict(pair_id.into()));
        }
        let o = match st.outstanding.get(pair_id) {
            Some(o) if o.rater == rater => o.clone(),
            _ => return Err(ArenaError::NotFound(pair_id.into())),
        };
        if now >= o.issued_ms + self.cfg.pair_ttl_ms {
            st.outstanding.remove(pair_id);
            st.by_rater.remove(rater);
            return Err(ArenaError::NotFound(pair_id.into()));
        }
        let (desc, a, b) = o.key.clone();
        let outcome = match (choice, o.left_is_a) {
            (Choice::Same, _) => MatchOutcome::Tie,
            (Choice::Left, true) | (Choice::Right, false) => MatchOutcome::AWins,
            (Choice::Left, false) | (Choice::Right, true) => MatchOutcome::BWins,
        };
        let record = MatchRecord {
            match_id: format!("human:{pair_id}"),
            description_id: desc,
            model_a: a,
            model_b: b,
            outcome,
            source: MatchSource::Human,
            rater_id: Some(rater.to_string()),
            timestamp: now,
        };
        if let Some(sink) = &st.sink {
            sink.append(&match_row(&record)?)?;
        }
        st.table.update(&record)?;
        st.log.push(record.clone());
        st.outstanding.remove(pair_id);
        st.by_rater.remove(rater);
        st.closed.insert(pair_id.to_string());
        st.judged.insert((rater.to_string(), o.key));
        Ok(record)
    }

    pub fn leaderboard(&self) -> Leaderboard {
        let st = self.lock();
        let models = st
            .table
            .ranking()
            .into_iter()
            .map(|(model_id, rating)| {
                let entries = self.entries.get(&model_id).map(Vec::as_slice).unwrap_or(&[]);
                LeaderboardRow {
                    matches: st.table.matches.get(&model_id).copied().unwrap_or(0),
                    compile_rate: compile_rate(entries).unwrap_or(0.0),
                    mean_relevance: mean_relevance(entries).unwrap_or(0.0),
                    model_id,
                    rating,
                }
            })
            .collect();
        Leaderboard {
            k_factor: self.cfg.k_factor,
            initial_rating: self.cfg.initial_rating,
            mean_relevance_convention: MEAN_RELEVANCE_CONVENTION.into(),
            models,
        }
    }
}

fn canonical(desc: &str, a: &str, b: &str) -> PairKey {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    (desc.to_string(), a.to_string(), b.to_string())
}

fn match_row(m: &MatchRecord) -> Result<DatasetRecord, StoreError> {
    DatasetRecord::new(&m.match_id, &m.description_id).with("match", m)
}
