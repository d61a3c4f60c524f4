use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DescriptionEntry, RunConfig};
use super::Result;
use crate::adapters::{Generator, SamplingProfile};
use crate::candidate::{Candidate, Workbench};
use crate::prefs::{
    export_top_dataset, generate_variants, preference_records, rank_candidates, PairMode, PrefsError, RankedSet,
};
use crate::refine::{refine, shard_bytes, ChainCounts, RefinedRecord};
use crate::store::{write_atomic, BlobRef, BlobStore, Dataset, DatasetRecord, MediaKind};

pub fn prefs_export_path(store_dir: &Path, iteration: u32) -> PathBuf {
    store_dir.join("exports").join(format!("prefs-{iteration:03}.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefsSummary {
    pub iteration: u32,
    pub descriptions: usize,
    /// Descriptions where every profile failed to generate.
    pub skipped: usize,
    pub pairs: usize,
    pub top_records: usize,
    /// The variants run back through the regular filter chain.
    pub filtered: ChainCounts,
    pub filtered_shard: Option<BlobRef>,
}

/// Samples every description under each profile, ranks the variants, and
/// writes three outputs under `store`: preference pairs
/// (`datasets/prefs/NNN/pairs`), the best compiling variant per description
/// (`datasets/prefs/NNN/top`), and a shard of the variants that pass the
/// filter chain (`exports/prefs-NNN.jsonl`).
#[allow(clippy::too_many_arguments)]
pub fn run_prefs(
    cfg: &RunConfig,
    iteration: u32,
    descriptions: &[DescriptionEntry],
    profiles: &[SamplingProfile],
    generator: &dyn Generator,
    bench: &Workbench<'_>,
    store: &dyn BlobStore,
    mode: PairMode,
) -> Result<PrefsSummary> {
    let mut sets: Vec<RankedSet> = Vec::new();
    let mut all: Vec<Candidate> = Vec::new();
    let mut skipped = 0;
    for d in descriptions {
        let gt = match &d.reference_source {
            Some(src) => bench.reference_vec(src)?,
            None => None,
        };
        let variants = match generate_variants(
            &d.description_id,
            &d.description,
            profiles,
            generator,
            &cfg.templates,
            bench,
            gt.as_ref(),
            iteration,
        ) {
            Ok(v) => v,
            Err(PrefsError::AllFailed { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        sets.push(rank_candidates(&variants)?);
        all.extend(variants);
    }

    let pairs_ds = Dataset::open(&cfg.store_dir, &format!("prefs/{iteration:03}/pairs"))?;
    let mut pairs = 0;
    for set in &sets {
        for (k, rec) in preference_records(set, mode).into_iter().enumerate() {
            let row = DatasetRecord::new(format!("{}#{k}", set.description_id), &set.description_id)
                .with("pair", &rec)?;
            pairs_ds.append_if_absent(&row)?;
            pairs += 1;
        }
    }
    let top_ds = Dataset::open(&cfg.store_dir, &format!("prefs/{iteration:03}/top"))?;
    let top = export_top_dataset(&sets, store)?;
    for rec in &top {
        top_ds.append_if_absent(&DatasetRecord::new(&rec.candidate_id, &rec.description_id).with("top", rec)?)?;
    }

    all.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    let (kept, filtered) = refine(all, &cfg.filter_for(iteration))?;
    let records = kept.iter().map(RefinedRecord::from_candidate).collect::<Result<Vec<_>, _>>()?;
    let bytes = shard_bytes(&records);
    let filtered_shard = if bytes.is_empty() {
        None
    } else {
        Some(store.put_blob(&bytes, MediaKind::DatasetShard)?)
    };
    write_atomic(&prefs_export_path(&cfg.store_dir, iteration), &bytes)?;
    Ok(PrefsSummary {
        iteration,
        descriptions: descriptions.len(),
        skipped,
        pairs,
        top_records: top.len(),
        filtered,
        filtered_shard,
    })
}
