//! Command-line driver and arena server for the data refinery.

pub mod server;

use std::path::Path;

use anyhow::Context;
use refinery_core::arena::{Arena, ArenaConfig};
use refinery_core::orchestrator::{load_eval_snapshot, snapshot_path, RunConfig};
use refinery_core::store::Dataset;

/// Builds the arena from an evaluation snapshot (default: the latest one in
/// the store) and attaches the persistent match log.
pub fn load_arena(cfg: &RunConfig, snapshot: Option<&Path>, seed: u64) -> anyhow::Result<Arena> {
    let path = snapshot.map_or_else(|| snapshot_path(&cfg.store_dir, None), Path::to_path_buf);
    let snap = load_eval_snapshot(&path)
        .with_context(|| format!("loading evaluation snapshot {} (run `refinery eval` first)", path.display()))?;
    let arena = Arena::new(
        snap.entries,
        snap.descriptions,
        ArenaConfig {
            k_factor: cfg.k_factor,
            initial_rating: cfg.initial_rating,
            seed,
            ..ArenaConfig::default()
        },
    )?;
    arena.attach_log(Dataset::open(&cfg.store_dir, "arena/matches")?)?;
    Ok(arena)
}
