use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{load_descriptions, AdapterSet, DescriptionEntry, RunConfig};
use super::{OrchestratorError, Result};
use crate::adapters::{generate, SamplingProfile};
use crate::candidate::{Candidate, SampleInfo, Workbench};
use crate::refine::{refine, shard_bytes, FilterConfig, RefinedRecord};
use crate::repair::RepairRule;
use crate::store::{
    digest_hex, write_atomic, BlobRef, BlobStore, Clock, Dataset, DatasetRecord, FsBlobStore, FsJobQueue, Job,
    JobKind, MediaKind, SystemClock, DIGEST_ALGORITHM,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub sampled: usize,
    pub generated: usize,
    pub repaired: usize,
    pub compiled: usize,
    pub rendered: usize,
    pub scored: usize,
    pub passed_min: usize,
    pub passed_percentile: usize,
    pub after_dedup: usize,
}

impl StageCounts {
    /// `generated ≥ compiled ≥ rendered ≥ scored ≥ passed_min ≥
    /// passed_percentile ≥ after_dedup`.
    pub fn chain_holds(&self) -> bool {
        let chain = [
            self.generated,
            self.compiled,
            self.rendered,
            self.scored,
            self.passed_min,
            self.passed_percentile,
            self.after_dedup,
        ];
        self.sampled >= self.generated && self.generated >= self.repaired && chain.windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSnapshot {
    pub name: String,
    pub digest: String,
    pub weight: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub filter: FilterConfig,
    pub profiles: Vec<SamplingProfile>,
    pub template_digests: BTreeMap<String, String>,
    pub digest_algorithm: String,
    pub seed: u64,
    pub samples_per_iteration: usize,
    pub sample_with_replacement: bool,
    pub sources: Vec<SourceSnapshot>,
    pub repair: bool,
    pub max_repair_rounds: u32,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationManifest {
    pub iteration: u32,
    pub counts: StageCounts,
    pub config: ConfigSnapshot,
    /// `None` when nothing survived the filters.
    pub shard: Option<BlobRef>,
    /// Jobs given up on (non-transient error or retries exhausted).
    pub failed_jobs: usize,
    /// The wall-clock cap stopped generation early.
    pub capped: bool,
    pub wall_clock_ms: u64,
}

impl IterationManifest {
    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        IterationManifest {
            wall_clock_ms: 0,
            ..self.clone()
        }
    }
}

pub fn manifest_path(store_dir: &Path, iteration: u32) -> PathBuf {
    store_dir.join("manifests").join(format!("iteration-{iteration:03}.json"))
}

pub fn export_path(store_dir: &Path, iteration: u32) -> PathBuf {
    store_dir.join("exports").join(format!("iteration-{iteration:03}.jsonl"))
}

pub fn load_manifest(path: &Path) -> Result<IterationManifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub struct RunOptions {
    /// Simulated crash: the n-th job (1-based) writes its output record and
    /// then the run stops without completing it or enqueueing its successor.
    pub crash_after_jobs: Option<usize>,
    pub clock: Arc<dyn Clock>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            crash_after_jobs: None,
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PlanEntry {
    candidate_id: String,
    description_id: String,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_source: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Payload {
    entry: PlanEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_ref: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidate: Option<Candidate>,
}

fn sample_plan(
    sources: &[Vec<DescriptionEntry>],
    weights: &[f64],
    n: usize,
    seed: u64,
    iteration: u32,
    with_replacement: bool,
) -> Vec<PlanEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let mut pools: Vec<Vec<usize>> = sources.iter().map(|s| (0..s.len()).collect()).collect();
    let mut plan = Vec::with_capacity(n);
    for k in 0..n {
        let live: Vec<f64> = weights
            .iter()
            .zip(&pools)
            .map(|(w, p)| if p.is_empty() { 0.0 } else { *w })
            .collect();
        let Ok(dist) = WeightedIndex::new(&live) else {
            log::warn!("description sources exhausted after {k} of {n} samples");
            break;
        };
        let s = dist.sample(&mut rng);
        let pool = &mut pools[s];
        let i = rng.random_range(0..pool.len());
        let d = if with_replacement { pool[i] } else { pool.swap_remove(i) };
        let entry = &sources[s][d];
        plan.push(PlanEntry {
            candidate_id: format!("it{iteration:03}-{k:06}"),
            description_id: entry.description_id.clone(),
            description: entry.description.clone(),
            reference_source: entry.reference_source.clone(),
        });
    }
    plan
}

fn load_sources(cfg: &RunConfig) -> Result<Vec<Vec<DescriptionEntry>>> {
    if cfg.description_sources.is_empty() {
        return Err(OrchestratorError::Precondition("no description sources configured".into()));
    }
    let sources = cfg
        .description_sources
        .iter()
        .map(|p| load_descriptions(p))
        .collect::<Result<Vec<_>>>()?;
    if sources.iter().all(Vec::is_empty) {
        return Err(OrchestratorError::Precondition("description sources are empty".into()));
    }
    Ok(sources)
}

/// The descriptions iteration `iteration` samples, in plan order.
pub fn sample_descriptions(cfg: &RunConfig, iteration: u32) -> Result<Vec<DescriptionEntry>> {
    let samples = cfg.samples_for(iteration);
    if samples == 0 {
        return Err(OrchestratorError::Precondition("samples_per_iteration must be positive".into()));
    }
    let sources = load_sources(cfg)?;
    let plan = sample_plan(
        &sources,
        &cfg.weights_for(iteration),
        samples,
        cfg.seed,
        iteration,
        cfg.sample_with_replacement,
    );
    Ok(plan
        .into_iter()
        .map(|e| DescriptionEntry {
            description_id: e.description_id,
            description: e.description,
            reference_source: e.reference_source,
        })
        .collect())
}

fn is_transient(e: &OrchestratorError) -> bool {
    match e {
        OrchestratorError::Adapter(e) => e.is_transient(),
        OrchestratorError::Candidate(e) => e.is_transient(),
        OrchestratorError::Store(e) => e.is_transient(),
        _ => false,
    }
}

struct StageOutput {
    dataset: &'static str,
    record: DatasetRecord,
    next: Option<(String, JobKind, Payload)>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    iteration: u32,
    profile: SamplingProfile,
    adapters: &'a AdapterSet,
    bench: Workbench<'a>,
    store: &'a FsBlobStore,
    queue: FsJobQueue,
    datasets: BTreeMap<&'static str, Dataset>,
    timeout: Duration,
    crash_after: Option<usize>,
    started: AtomicUsize,
    stop: AtomicBool,
    deadline: Option<Instant>,
}

impl Ctx<'_> {
    fn dataset(&self, name: &str) -> &Dataset {
        &self.datasets[name]
    }

    fn capped(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn enqueue(&self, job_id: &str, kind: JobKind, payload: &Payload) -> Result<()> {
        let blob = self.store.put_blob(&serde_json::to_vec(payload)?, MediaKind::JobPayload)?;
        self.queue.enqueue_with_id(job_id, kind, blob)?;
        Ok(())
    }

    fn info<'p>(&'p self, entry: &'p PlanEntry) -> SampleInfo<'p> {
        SampleInfo {
            candidate_id: &entry.candidate_id,
            description_id: &entry.description_id,
            description: &entry.description,
            profile_id: Some(&self.profile.profile_id),
            iteration: self.iteration,
        }
    }

    fn generate(&self, p: Payload) -> Result<StageOutput> {
        let e = &p.entry;
        let prompt = self.cfg.templates.build_generation_prompt(&e.description)?;
        let source = generate(self.adapters.generator.as_ref(), &prompt, &self.profile)?;
        let source_ref = self.store.put_blob(source.as_bytes(), MediaKind::ProgramSource)?;
        Ok(StageOutput {
            dataset: "generated",
            record: DatasetRecord::new(&e.candidate_id, &e.description_id).with("source_ref", &source_ref)?,
            next: Some((
                format!("{}-compile", e.candidate_id),
                JobKind::CompileRender,
                Payload {
                    source_ref: Some(source_ref),
                    ..p
                },
            )),
        })
    }

    fn compile_render(&self, p: Payload) -> Result<StageOutput> {
        let e = &p.entry;
        let source_ref = p.source_ref.as_ref().ok_or_else(|| OrchestratorError::Job {
            job_id: format!("{}-compile", e.candidate_id),
            reason: "payload has no source".into(),
        })?;
        let source = String::from_utf8_lossy(&self.store.get_blob(&source_ref.key)?).into_owned();
        let (mut c, final_source) = self.bench.compile(&self.info(e), &source)?;
        self.bench.render(&mut c, &final_source)?;
        let record = DatasetRecord::new(&e.candidate_id, &e.description_id).with("candidate", &c)?;
        let next = c.outcome.success.then(|| {
            (
                format!("{}-score", e.candidate_id),
                JobKind::Score,
                Payload {
                    entry: e.clone(),
                    source_ref: Some(c.source_ref.clone()),
                    candidate: Some(c),
                },
            )
        });
        Ok(StageOutput {
            dataset: "compiled",
            record,
            next,
        })
    }

    fn score(&self, p: Payload) -> Result<StageOutput> {
        let e = &p.entry;
        let mut c = p.candidate.ok_or_else(|| OrchestratorError::Job {
            job_id: format!("{}-score", e.candidate_id),
            reason: "payload has no candidate".into(),
        })?;
        let desc_vec = self.bench.description_vec(&e.description)?;
        let gt_vec = match &e.reference_source {
            Some(src) => self.bench.reference_vec(src)?,
            None => None,
        };
        self.bench.score(&mut c, desc_vec.as_ref(), gt_vec.as_ref())?;
        Ok(StageOutput {
            dataset: "scored",
            record: DatasetRecord::new(&e.candidate_id, &e.description_id).with("candidate", &c)?,
            next: None,
        })
    }

    /// Returns `true` when the simulated crash fired.
    fn handle(&self, job: &Job) -> Result<bool> {
        let n = self.started.fetch_add(1, Ordering::SeqCst) + 1;
        let crash = self.crash_after == Some(n);
        let payload: Payload = serde_json::from_slice(&self.store.get_blob(&job.payload_ref.key)?)?;
        let candidate_id = payload.entry.candidate_id.clone();
        let description_id = payload.entry.description_id.clone();
        let result = match job.kind {
            JobKind::Generate => self.generate(payload),
            JobKind::CompileRender => self.compile_render(payload),
            JobKind::Score => self.score(payload),
        };
        match result {
            Ok(out) => {
                self.dataset(out.dataset).append_if_absent(&out.record)?;
                if crash {
                    return Ok(true);
                }
                if let Some((id, kind, payload)) = out.next {
                    self.enqueue(&id, kind, &payload)?;
                }
            }
            Err(e) if is_transient(&e) && job.attempts < self.cfg.max_attempts => {
                log::warn!("{} attempt {} failed, retrying: {e}", job.job_id, job.attempts);
                if crash {
                    return Ok(true);
                }
                self.queue.release_job(&job.job_id)?;
                return Ok(false);
            }
            Err(e) => {
                log::warn!("{} failed: {e}", job.job_id);
                let record = DatasetRecord::new(&job.job_id, description_id)
                    .with("candidate_id", &candidate_id)?
                    .with("kind", job.kind)?
                    .with("reason", e.to_string())?;
                self.dataset("failed").append_if_absent(&record)?;
                if crash {
                    return Ok(true);
                }
            }
        }
        self.queue.complete_job(&job.job_id)?;
        Ok(false)
    }

    fn worker(&self) -> Result<()> {
        const ORDER: [JobKind; 3] = [JobKind::Score, JobKind::CompileRender, JobKind::Generate];
        loop {
            if self.stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            let kinds = if self.capped() { &ORDER[..2] } else { &ORDER[..] };
            let mut leased = None;
            for kind in kinds {
                if let Some(job) = self.queue.lease_job(*kind, self.timeout)? {
                    leased = Some(job);
                    break;
                }
            }
            match leased {
                Some(job) => {
                    if self.handle(&job)? {
                        self.stop.store(true, Ordering::SeqCst);
                        return Ok(());
                    }
                }
                None => {
                    let mut pending = 0;
                    for kind in kinds {
                        pending += self.queue.pending(*kind)?;
                    }
                    if pending == 0 {
                        return Ok(());
                    }
                    thread::sleep(Duration::from_millis(5));
                }
            }
        }
    }
}

fn source_snapshots(cfg: &RunConfig, iteration: u32, sources: &[Vec<DescriptionEntry>]) -> Result<Vec<SourceSnapshot>> {
    let weights = cfg.weights_for(iteration);
    cfg.description_sources
        .iter()
        .zip(weights)
        .zip(sources)
        .map(|((path, weight), entries)| {
            Ok(SourceSnapshot {
                name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                digest: digest_hex(&fs::read(path)?),
                weight,
                size: entries.len(),
            })
        })
        .collect()
}

/// Writes the plan (or checks it against an earlier one) and enqueues a
/// generation job per sample. Safe to repeat.
fn plan_and_enqueue(ctx: &Ctx<'_>, plan: &[PlanEntry]) -> Result<()> {
    let ds = ctx.dataset("plan");
    let existing = ds.read_all()?;
    if !existing.is_empty() {
        let mut old = Vec::new();
        for rec in &existing {
            old.extend(rec.get::<PlanEntry>("entry")?);
        }
        if old.len() > plan.len() || old[..] != plan[..old.len()] {
            return Err(OrchestratorError::Precondition(format!(
                "iteration {} was already planned with a different configuration",
                ctx.iteration
            )));
        }
    }
    for entry in plan {
        ds.append_if_absent(&DatasetRecord::new(&entry.candidate_id, &entry.description_id).with("entry", entry)?)?;
        let payload = Payload {
            entry: entry.clone(),
            source_ref: None,
            candidate: None,
        };
        ctx.enqueue(&format!("{}-gen", entry.candidate_id), JobKind::Generate, &payload)?;
    }
    Ok(())
}

/// Runs one iteration with adapters built from `cfg`.
pub fn run_iteration(cfg: &RunConfig, iteration: u32) -> Result<IterationManifest> {
    let adapters = AdapterSet::from_config(cfg)?;
    run_iteration_with(cfg, iteration, &adapters, &RunOptions::default())
}

/// Samples, generates, repairs, compiles, renders and scores through the
/// job queue, then filters, de-duplicates and exports in one batch.
///
/// Everything is keyed by candidate id, so calling this again after a crash
/// finishes the remaining jobs and reproduces the same shard.
pub fn run_iteration_with(
    cfg: &RunConfig,
    iteration: u32,
    adapters: &AdapterSet,
    options: &RunOptions,
) -> Result<IterationManifest> {
    let started = Instant::now();
    let samples = cfg.samples_for(iteration);
    if samples == 0 {
        return Err(OrchestratorError::Precondition("samples_per_iteration must be positive".into()));
    }
    let sources = load_sources(cfg)?;
    let filter = cfg.filter_for(iteration);
    filter.validate()?;
    let profile = cfg.profile_for(iteration);
    profile.validate()?;
    cfg.templates.validate()?;
    let rules: Vec<RepairRule> = cfg.rules()?;
    let weights = cfg.weights_for(iteration);
    let plan = sample_plan(&sources, &weights, samples, cfg.seed, iteration, cfg.sample_with_replacement);

    let store = FsBlobStore::open(&cfg.store_dir)?;
    let iter_name = format!("iterations/{iteration:03}");
    let queue = FsJobQueue::with_clock(cfg.store_dir.join(&iter_name), options.clock.clone())?;
    let mut datasets = BTreeMap::new();
    for name in ["plan", "generated", "compiled", "scored", "failed"] {
        datasets.insert(name, Dataset::open(&cfg.store_dir, &format!("{iter_name}/{name}"))?);
    }
    let ctx = Ctx {
        cfg,
        iteration,
        profile: profile.clone(),
        adapters,
        bench: Workbench {
            compiler: adapters.compiler.as_ref(),
            renderer: adapters.renderer.as_ref(),
            embedder: adapters.embedder.as_ref(),
            rules: &rules,
            max_repair_rounds: cfg.max_repair_rounds,
            store: Some(&store),
        },
        store: &store,
        queue,
        datasets,
        timeout: Duration::from_millis(cfg.visibility_timeout_ms),
        crash_after: options.crash_after_jobs,
        started: AtomicUsize::new(0),
        stop: AtomicBool::new(false),
        deadline: cfg.wall_clock_cap_ms.map(|ms| started + Duration::from_millis(ms)),
    };
    plan_and_enqueue(&ctx, &plan)?;

    let results: Vec<Result<()>> = thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.workers).map(|_| s.spawn(|| ctx.worker())).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(OrchestratorError::Precondition("worker panicked".into()))))
            .collect()
    });
    for r in results {
        r?;
    }
    if ctx.stop.load(Ordering::SeqCst) {
        return Err(OrchestratorError::Interrupted(ctx.started.load(Ordering::SeqCst)));
    }
    let capped = ctx.queue.pending(JobKind::Generate)? > 0;

    // batch stage
    let generated = ctx.dataset("generated").read_all()?.len();
    let mut by_id: BTreeMap<String, Candidate> = BTreeMap::new();
    for name in ["compiled", "scored"] {
        for rec in ctx.dataset(name).read_all()? {
            if let Some(c) = rec.get::<Candidate>("candidate")? {
                by_id.insert(c.candidate_id.clone(), c);
            }
        }
    }
    let candidates: Vec<Candidate> = by_id.into_values().collect();
    let repaired = candidates.iter().filter(|c| c.repaired).count();
    let rendered = candidates.iter().filter(|c| c.render.is_some()).count();
    let (kept, chain) = refine(candidates, &filter)?;
    let records = kept.iter().map(RefinedRecord::from_candidate).collect::<Result<Vec<_>, _>>()?;
    let bytes = shard_bytes(&records);
    let shard = if bytes.is_empty() {
        None
    } else {
        Some(store.put_blob(&bytes, MediaKind::DatasetShard)?)
    };
    write_atomic(&export_path(&cfg.store_dir, iteration), &bytes)?;

    let manifest = IterationManifest {
        iteration,
        counts: StageCounts {
            sampled: plan.len(),
            generated,
            repaired,
            compiled: chain.compiled,
            rendered,
            scored: chain.scored,
            passed_min: chain.passed_min,
            passed_percentile: chain.passed_percentile,
            after_dedup: chain.after_dedup,
        },
        config: ConfigSnapshot {
            filter,
            profiles: vec![profile],
            template_digests: cfg
                .templates
                .digests()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            digest_algorithm: DIGEST_ALGORITHM.into(),
            seed: cfg.seed,
            samples_per_iteration: samples,
            sample_with_replacement: cfg.sample_with_replacement,
            sources: source_snapshots(cfg, iteration, &sources)?,
            repair: cfg.repair,
            max_repair_rounds: cfg.max_repair_rounds,
            embedding_dim: cfg.embedding_dim,
        },
        shard,
        failed_jobs: ctx.dataset("failed").read_all()?.len(),
        capped,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&manifest_path(&cfg.store_dir, iteration), &json)?;
    Ok(manifest)
}

/// Runs `command` (split on whitespace) with the shard path appended.
pub fn run_trainer_hook(command: &str, shard_path: &Path) -> Result<()> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| OrchestratorError::Hook("empty trainer hook command".into()))?;
    let status = Command::new(program).args(parts).arg(shard_path).status()?;
    if !status.success() {
        return Err(OrchestratorError::Hook(format!("`{command}` exited with {status}")));
    }
    Ok(())
}
