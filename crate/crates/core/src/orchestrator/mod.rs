//! Drives the refinery: configuration, the queued iteration loop, model
//! evaluation, and cross-iteration reporting.

mod config;
mod eval;
mod iteration;
mod prefs_run;
mod report;

use thiserror::Error;

pub use config::{
    build_compiler, build_generator, load_descriptions, AdapterSet, DescriptionEntry, IterationOverride,
    ModelConfig, RunConfig,
};
pub use eval::{
    load_eval_snapshot, run_eval, save_eval_snapshot, snapshot_path, EvalModel, EvalOptions, EvalReport, EvalSnapshot,
    ModelResult, EXPECTED_EVAL_SET_SIZE,
};
pub use iteration::{
    export_path, load_manifest, manifest_path, run_iteration, run_iteration_with, run_trainer_hook, sample_descriptions, ConfigSnapshot, IterationManifest,
    RunOptions, StageCounts,
};
pub use prefs_run::{prefs_export_path, run_prefs, PrefsSummary};
pub use report::{load_run, report_timeseries, timeseries_table, TimeseriesRow};

use crate::adapters::AdapterError;
use crate::arena::ArenaError;
use crate::candidate::CandidateError;
use crate::prefs::PrefsError;
use crate::refine::RefineError;
use crate::repair::RepairError;
use crate::scoring::ScoringError;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// Fault injection stopped the run before it finished.
    #[error("run interrupted after {0} jobs")]
    Interrupted(usize),
    #[error("job {job_id} failed: {reason}")]
    Job { job_id: String, reason: String },
    #[error("trainer hook failed: {0}")]
    Hook(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Candidate(#[from] CandidateError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Prefs(#[from] PrefsError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;
