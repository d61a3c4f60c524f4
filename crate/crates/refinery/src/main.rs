use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use refinery::{load_arena, server};
use refinery_core::arena::{replay, replay_shuffled_average, MatchRecord};
use refinery_core::candidate::Workbench;
use refinery_core::orchestrator::{
    export_path, load_descriptions, load_run, report_timeseries, run_iteration, run_prefs, run_trainer_hook,
    sample_descriptions, save_eval_snapshot, timeseries_table, AdapterSet, EvalModel, EvalOptions, RunConfig,
};
use refinery_core::prefs::{default_profile_pack, PairMode};
use refinery_core::scoring::PromptTemplates;
use refinery_core::store::{Dataset, FsBlobStore};

#[derive(Parser)]
#[command(name = "refinery", version, about = "Self-training data refinery for UI code generation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Adjacent,
    TopVsRest,
    AllOrdered,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one sample-filter-export iteration (resumes if interrupted).
    Iterate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iteration: u32,
        /// Command run with the exported shard path appended.
        #[arg(long)]
        trainer_hook: Option<String>,
    },
    /// Evaluate the configured models on the evaluation set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Store the snapshot under this iteration for `report`.
        #[arg(long)]
        iteration: Option<u32>,
        /// Model followed by the time series.
        #[arg(long)]
        track: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the arena HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-iteration compile rate, mean relevance and mined count.
    Report {
        /// Store directory of the run.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Recompute ratings from the recorded match log.
    Replay {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 0)]
        shuffle: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32.0)]
        k_factor: f64,
        #[arg(long, default_value_t = 1000.0)]
        initial_rating: f64,
    },
    /// Print the scoring, generation and paraphrase prompts.
    ShowPrompts {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "a login page")]
        description: String,
    },
    /// Sample every profile per description and export preference pairs.
    Prefs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iteration: u32,
        #[arg(long, value_enum, default_value_t = Mode::Adjacent)]
        mode: Mode,
    },
}

fn iterate(config: &Path, iteration: u32, hook: Option<&str>) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let manifest = run_iteration(&cfg, iteration)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    if let Some(cmd) = hook {
        run_trainer_hook(cmd, &export_path(&cfg.store_dir, iteration))?;
    }
    Ok(())
}

fn eval(config: &Path, iteration: Option<u32>, track: Option<String>, seed: u64) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let set_path = cfg.eval_set.as_ref().context("config has no eval_set")?;
    let eval_set = load_descriptions(set_path)?;
    let timeout = Duration::from_millis(cfg.generator_timeout_ms);
    let models = cfg
        .models
        .iter()
        .map(|m| EvalModel::from_config(m, timeout))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(t) = &track {
        if !cfg.models.iter().any(|m| &m.model_id == t) {
            bail!("--track names unknown model `{t}`");
        }
    }
    let compiler = refinery_core::orchestrator::build_compiler(&cfg.compiler, &cfg.compiler_extension)?;
    let embedder = refinery_core::adapters::HashEmbedder::new(cfg.embedding_dim);
    let store = FsBlobStore::open(&cfg.store_dir)?;
    let rules = if cfg.eval_repair { cfg.rules()? } else { Vec::new() };
    let bench = Workbench {
        compiler: compiler.as_ref(),
        renderer: &refinery_core::adapters::MiniUiRenderer,
        embedder: &embedder,
        rules: &rules,
        max_repair_rounds: cfg.max_repair_rounds,
        store: Some(&store),
    };
    let options = EvalOptions {
        max_attempts: cfg.max_attempts,
        seed,
    };
    let (mut snapshot, _) = refinery_core::orchestrator::run_eval(&cfg, &eval_set, &models, &bench, &options)?;
    snapshot.iteration = iteration;
    snapshot.tracked_model = track;
    let path = save_eval_snapshot(&cfg.store_dir, &snapshot)?;
    print!("{}", snapshot.report.table());
    for w in &snapshot.report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("snapshot written to {}", path.display());
    Ok(())
}

async fn serve(config: &Path, host: &str, port: u16, snapshot: Option<&Path>, seed: u64) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let arena = Arc::new(load_arena(&cfg, snapshot, seed)?);
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("arena listening on {}", listener.local_addr()?);
    axum::serve(listener, server::router(arena)).await?;
    Ok(())
}

fn report(runs: &Path, json: bool) -> anyhow::Result<()> {
    let (manifests, snapshots) = load_run(runs)?;
    let rows = report_timeseries(&manifests, &snapshots)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", timeseries_table(&rows));
    }
    Ok(())
}

fn replay_log(runs: &Path, shuffle: usize, seed: u64, k: f64, initial: f64) -> anyhow::Result<()> {
    let mut log = Vec::new();
    for rec in Dataset::open(runs, "arena/matches")?.read_all()? {
        if let Some(m) = rec.get::<MatchRecord>("match")? {
            log.push(m);
        }
    }
    let ratings: Vec<(String, f64)> = if shuffle == 0 {
        replay(&log, k, initial)?.ranking()
    } else {
        let mut v: Vec<_> = replay_shuffled_average(&log, shuffle, seed, k, initial)?.into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    };
    println!("{} matches", log.len());
    for (model, r) in ratings {
        println!("{model}\t{r:.1}");
    }
    Ok(())
}

fn show_prompts(config: Option<&Path>, description: &str) -> anyhow::Result<()> {
    let templates = match config {
        Some(p) => RunConfig::load(p)?.templates,
        None => PromptTemplates::default(),
    };
    println!("scoring:\n{}\n", templates.build_scoring_prompt(description)?);
    println!("generation:\n{}\n", templates.build_generation_prompt(description)?);
    println!("paraphrase:\n{}", templates.build_paraphrase_prompt(description)?);
    Ok(())
}

fn prefs(config: &Path, iteration: u32, mode: Mode) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let adapters = AdapterSet::from_config(&cfg)?;
    let descriptions = sample_descriptions(&cfg, iteration)?;
    let store = FsBlobStore::open(&cfg.store_dir)?;
    let rules = cfg.rules()?;
    let bench = Workbench {
        compiler: adapters.compiler.as_ref(),
        renderer: adapters.renderer.as_ref(),
        embedder: adapters.embedder.as_ref(),
        rules: &rules,
        max_repair_rounds: cfg.max_repair_rounds,
        store: Some(&store),
    };
    let mode = match mode {
        Mode::Adjacent => PairMode::Adjacent,
        Mode::TopVsRest => PairMode::TopVsRest,
        Mode::AllOrdered => PairMode::AllOrdered,
    };
    let summary = run_prefs(
        &cfg,
        iteration,
        &descriptions,
        &default_profile_pack(),
        adapters.generator.as_ref(),
        &bench,
        &store,
        mode,
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Iterate {
            config,
            iteration,
            trainer_hook,
        } => iterate(&config, iteration, trainer_hook.as_deref()),
        Cmd::Eval {
            config,
            iteration,
            track,
            seed,
        } => eval(&config, iteration, track, seed),
        Cmd::Serve {
            config,
            port,
            host,
            snapshot,
            seed,
        } => serve(&config, &host, port, snapshot.as_deref(), seed).await,
        Cmd::Report { runs, json } => report(&runs, json),
        Cmd::Replay {
            runs,
            shuffle,
            seed,
            k_factor,
            initial_rating,
        } => replay_log(&runs, shuffle, seed, k_factor, initial_rating),
        Cmd::ShowPrompts { config, description } => show_prompts(config.as_deref(), &description),
        Cmd::Prefs {
            config,
            iteration,
            mode,
        } => prefs(&config, iteration, mode),
    }
}
