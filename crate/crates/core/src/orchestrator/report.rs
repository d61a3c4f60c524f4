use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{load_eval_snapshot, EvalSnapshot};
use super::iteration::{load_manifest, IterationManifest};
use super::{OrchestratorError, Result};

/// One point of the performance-over-time series. Metrics are null when
/// the iteration has no evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub iteration: u32,
    pub compile_rate: Option<f64>,
    pub mean_relevance: Option<f64>,
    pub mined_count: usize,
}

/// Joins manifests with evaluation snapshots by iteration, ordered by
/// iteration. Snapshots without an iteration number are ignored.
pub fn report_timeseries(manifests: &[IterationManifest], snapshots: &[EvalSnapshot]) -> Result<Vec<TimeseriesRow>> {
    if manifests.is_empty() {
        return Err(OrchestratorError::Precondition("no iteration manifests".into()));
    }
    let by_iter: BTreeMap<u32, &EvalSnapshot> = snapshots
        .iter()
        .filter_map(|s| s.iteration.map(|i| (i, s)))
        .collect();
    let mut rows: Vec<TimeseriesRow> = manifests
        .iter()
        .map(|m| {
            let tracked = by_iter.get(&m.iteration).and_then(|s| s.tracked());
            TimeseriesRow {
                iteration: m.iteration,
                compile_rate: tracked.and_then(|t| t.compile_rate),
                mean_relevance: tracked.and_then(|t| t.mean_relevance),
                mined_count: m.counts.after_dedup,
            }
        })
        .collect();
    rows.sort_by_key(|r| r.iteration);
    Ok(rows)
}

/// Tab-separated, header first; nulls are empty cells.
pub fn timeseries_table(rows: &[TimeseriesRow]) -> String {
    let mut out = String::from("iteration\tcompile_rate\tmean_relevance\tmined_count\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.iteration,
            fmt(r.compile_rate),
            fmt(r.mean_relevance),
            r.mined_count
        );
    }
    out
}

fn json_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("iteration-"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads `manifests/iteration-*.json` and `eval/iteration-*.json` under a
/// store directory.
pub fn load_run(store_dir: &Path) -> Result<(Vec<IterationManifest>, Vec<EvalSnapshot>)> {
    let manifests = json_files(&store_dir.join("manifests"))?
        .iter()
        .map(|p| load_manifest(p))
        .collect::<Result<Vec<_>>>()?;
    let snapshots = json_files(&store_dir.join("eval"))?
        .iter()
        .map(|p| load_eval_snapshot(p))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifests, snapshots))
}
