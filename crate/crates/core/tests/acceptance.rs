mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refinery_core::adapters::{
    CompileOutcome, Compiler, Diagnostic, EmbeddingVector, MiniUiCompiler, MiniUiRenderer, Renderer,
};
use refinery_core::arena::{
    auto_outcome, expected_score, replay, replay_shuffled_average, Arena, ArenaConfig, AutoOutcome, Choice,
    EloTable, EvalEntry, MatchOutcome, MatchRecord, MatchSource,
};
use refinery_core::candidate::Candidate;
use refinery_core::orchestrator::{export_path, run_iteration, run_iteration_with, AdapterSet, RunConfig, RunOptions};
use refinery_core::prefs::{rank_candidates, to_preference_pairs, PairMode};
use refinery_core::refine::{dbscan, score_filter, FilterConfig, Label};
use refinery_core::repair::{apply_repairs, default_rules};
use refinery_core::scoring::{error_free_fraction, PromptTemplates, RelevanceScore};
use refinery_core::store::{BlobRef, Dataset, DatasetRecord, FsJobQueue, JobKind, ManualClock, MediaKind};

type Check = Result<String, String>;
type Named = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- Elo

const MODELS: [&str; 8] = ["m0", "m1", "m2", "m3", "m4", "m5", "m6", "m7"];

fn elo_algebra() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sym: f64 = 0.0;
    for _ in 0..10_000 {
        let a = rng.random_range(0.0..3000.0);
        let b = rng.random_range(0.0..3000.0);
        worst_sym = worst_sym.max((expected_score(a, b) + expected_score(b, a) - 1.0).abs());
    }
    ensure(worst_sym <= 1e-12, || format!("symmetry error {worst_sym:e}"))?;
    ensure(expected_score(1000.0, 1000.0) == 0.5, || "E(r, r) != 0.5".into())?;
    let ten_to_one = expected_score(1400.0, 1000.0);
    ensure((ten_to_one - 10.0 / 11.0).abs() < 1e-12, || format!("E(+400) = {ten_to_one}"))?;

    let (k, r0) = (32.0, 1000.0);
    let mut table = EloTable::new(k, r0);
    let mut mine = [r0; MODELS.len()];
    let mut log = Vec::with_capacity(10_000);
    let mut worst_drift: f64 = 0.0;
    let mut worst_dev: f64 = 0.0;
    for n in 0..10_000 {
        let i = rng.random_range(0..MODELS.len());
        let j = (i + rng.random_range(1..MODELS.len())) % MODELS.len();
        let (outcome, s) = match rng.random_range(0..3) {
            0 => (MatchOutcome::AWins, 1.0),
            1 => (MatchOutcome::BWins, 0.0),
            _ => (MatchOutcome::Tie, 0.5),
        };
        let m = MatchRecord::synthetic(format!("x{n}"), MODELS[i], MODELS[j], outcome);
        table.update(&m).map_err(|e| e.to_string())?;
        log.push(m);

        let e = 1.0 / (1.0 + 10f64.powf((mine[j] - mine[i]) / 400.0));
        mine[i] += k * (s - e);
        mine[j] -= k * (s - e);
        let total: f64 = table.ratings.values().sum();
        let expected_total = r0 * table.ratings.len() as f64;
        worst_drift = worst_drift.max((total - expected_total).abs());
        for (x, m) in MODELS.iter().enumerate() {
            if table.ratings.contains_key(*m) {
                worst_dev = worst_dev.max((table.rating(m) - mine[x]).abs());
            }
        }
    }
    ensure(worst_drift < 1e-9, || format!("zero-sum drift {worst_drift:e}"))?;
    ensure(worst_dev < 1e-9, || format!("deviation from reference update {worst_dev:e}"))?;

    let bits = |t: &EloTable| t.ratings.iter().map(|(m, r)| (m.clone(), r.to_bits())).collect::<Vec<_>>();
    let a = replay(&log, k, r0).map_err(|e| e.to_string())?;
    let b = replay(&log, k, r0).map_err(|e| e.to_string())?;
    ensure(bits(&a) == bits(&b), || "replays differ".into())?;
    ensure(bits(&a) == bits(&table), || "replay differs from live table".into())?;
    within(start, Duration::from_secs(1))?;
    Ok(format!(
        "sym {worst_sym:.1e}, drift {worst_drift:.1e} over 10^4 matches, replay bit-identical, {:?}",
        start.elapsed()
    ))
}

fn elo_recovery() -> Check {
    let start = Instant::now();
    let truth = [("t1200", 1200.0), ("t1100", 1100.0), ("t1000", 1000.0), ("t900", 900.0)];
    let want: Vec<&str> = truth.iter().map(|t| t.0).collect();
    let (mut averaged_ok, mut sequential_ok) = (0, 0);
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let log: Vec<MatchRecord> = (0..5000)
            .map(|n| {
                let i = rng.random_range(0..4);
                let j = (i + rng.random_range(1..4)) % 4;
                let p = 1.0 / (1.0 + 10f64.powf((truth[j].1 - truth[i].1) / 400.0));
                let outcome = if rng.random::<f64>() < p {
                    MatchOutcome::AWins
                } else {
                    MatchOutcome::BWins
                };
                MatchRecord::synthetic(format!("s{n}"), truth[i].0, truth[j].0, outcome)
            })
            .collect();
        let avg = replay_shuffled_average(&log, 16, trial, 32.0, 1000.0).map_err(|e| e.to_string())?;
        let mut order: Vec<(&String, &f64)> = avg.iter().collect();
        order.sort_by(|a, b| b.1.total_cmp(a.1));
        if order.iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>() == want {
            averaged_ok += 1;
        }
        let seq = replay(&log, 32.0, 1000.0).map_err(|e| e.to_string())?;
        if seq.ranking().iter().map(|(m, _)| m.as_str()).collect::<Vec<_>>() == want {
            sequential_ok += 1;
        }
    }
    ensure(averaged_ok >= 95, || {
        format!("{averaged_ok}/100 trials ordered correctly (sequential {sequential_ok}/100)")
    })?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "{averaged_ok}/100 trials recover the order with 16-shuffle averaging (single pass {sequential_ok}/100), {:?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- arena

fn eval_entry(model: &str, desc: &str, compiles: bool) -> EvalEntry {
    let src = if compiles {
        format!("Screen {{ Text \"{desc}\" }}")
    } else {
        "Screen { Txt \"x\" ".to_string()
    };
    EvalEntry {
        model_id: model.into(),
        description_id: desc.into(),
        source_ref: BlobRef::of(src.as_bytes(), MediaKind::ProgramSource),
        outcome: MiniUiCompiler.compile(&src).unwrap(),
        render: compiles.then(|| MiniUiRenderer.render(&src).unwrap()),
        combined_score: compiles.then_some(0.4),
    }
}

fn auto_outcomes() -> Check {
    let table = [
        ((true, true), None),
        ((true, false), Some(MatchOutcome::AWins)),
        ((false, true), Some(MatchOutcome::BWins)),
        ((false, false), Some(MatchOutcome::Tie)),
    ];
    let mut entries = Vec::new();
    let mut texts = BTreeMap::new();
    for (n, ((ca, cb), want)) in table.iter().enumerate() {
        let desc = format!("d{n}");
        let (a, b) = (eval_entry("alpha", &desc, *ca), eval_entry("beta", &desc, *cb));
        let got = auto_outcome(&a, &b).map_err(|e| e.to_string())?;
        match (got, want) {
            (AutoOutcome::NeedsHuman, None) => {}
            (AutoOutcome::Match(m), Some(w)) => {
                ensure(m.outcome == *w && m.source == MatchSource::AutoCompile, || {
                    format!("({ca}, {cb}) gave {:?}/{:?}", m.outcome, m.source)
                })?;
                ensure(m.model_a == "alpha" && m.model_b == "beta", || "sides swapped".into())?;
            }
            (g, w) => return Err(format!("({ca}, {cb}) gave {g:?}, want {w:?}")),
        }
        texts.insert(desc.clone(), format!("screen number {n}"));
        entries.push(a);
        entries.push(b);
    }
    let mismatch = auto_outcome(&eval_entry("alpha", "d0", true), &eval_entry("beta", "d1", true));
    ensure(mismatch.is_err(), || "description mismatch accepted".into())?;

    // only the both-compile description reaches a rater
    let arena = Arena::new(entries, texts, ArenaConfig::default()).map_err(|e| e.to_string())?;
    let auto: Vec<_> = arena.log().iter().map(|m| (m.description_id.clone(), m.outcome)).collect();
    let want_auto = vec![
        ("d1".to_string(), MatchOutcome::AWins),
        ("d2".to_string(), MatchOutcome::BWins),
        ("d3".to_string(), MatchOutcome::Tie),
    ];
    ensure(auto == want_auto, || format!("arena auto log {auto:?}"))?;
    let pair = arena.next_pair("r").ok_or("no human pair offered")?;
    ensure(pair.description == "screen number 0", || format!("offered {}", pair.description))?;
    arena
        .submit_preference(&pair.pair_id, Choice::Same, "r")
        .map_err(|e| e.to_string())?;
    ensure(arena.next_pair("r").is_none(), || "more than one human pair".into())?;
    Ok("4/4 rows, arena routes only the compile/compile row to raters".into())
}

// ---------------------------------------------------------------- dbscan

fn unit(raw: &[f64]) -> Vec<f64> {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| x / n).collect()
}

/// Textbook DBSCAN with a depth-first seed stack and on-the-fly neighbor
/// queries.
fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    const UNSEEN: i64 = -2;
    const NOISE: i64 = -1;
    let region = |p: usize| -> Vec<usize> {
        (0..points.len())
            .filter(|&q| {
                let dot: f64 = points[p].iter().zip(&points[q]).map(|(a, b)| a * b).sum();
                1.0 - dot <= eps
            })
            .collect()
    };
    let mut label = vec![UNSEEN; points.len()];
    let mut cluster = 0i64;
    for p in 0..points.len() {
        if label[p] != UNSEEN {
            continue;
        }
        let seeds = region(p);
        if seeds.len() < min_pts {
            label[p] = NOISE;
            continue;
        }
        label[p] = cluster;
        let mut stack: Vec<usize> = seeds.into_iter().filter(|&q| q != p).collect();
        while let Some(q) = stack.pop() {
            if label[q] == NOISE {
                label[q] = cluster;
            }
            if label[q] != UNSEEN {
                continue;
            }
            label[q] = cluster;
            let more = region(q);
            if more.len() >= min_pts {
                stack.extend(more);
            }
        }
        cluster += 1;
    }
    label.into_iter().map(|l| (l >= 0).then_some(l as usize)).collect()
}

fn dbscan_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut runs = 0;
    let mut clusters_seen = 0;
    for inst in 0..50 {
        let n = if inst == 0 { 1 } else { rng.random_range(2..=200) };
        let dim = 8;
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let spread = [0.05, 0.2, 0.5][inst % 3];
        let mut raw: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            if !raw.is_empty() && rng.random_bool(0.05) {
                let dup = raw[rng.random_range(0..raw.len())].clone();
                raw.push(dup);
                continue;
            }
            let c = &centers[rng.random_range(0..centers.len())];
            raw.push(c.iter().map(|x| x + rng.random_range(-spread..spread)).collect());
        }
        let points: Vec<Vec<f64>> = raw.iter().map(|r| unit(r)).collect();
        let vectors: Vec<EmbeddingVector> = raw
            .iter()
            .map(|r| EmbeddingVector::normalized(r.clone()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for eps in [0.1, 0.25, 0.5] {
            for min_pts in [2, 3] {
                let want = reference_dbscan(&points, eps, min_pts);
                let got: Vec<Option<usize>> = dbscan(&vectors, eps, min_pts)
                    .into_iter()
                    .map(|l| match l {
                        Label::Cluster(c) => Some(c),
                        Label::Noise => None,
                    })
                    .collect();
                if got != want {
                    let at = got.iter().zip(&want).position(|(a, b)| a != b);
                    return Err(format!("instance {inst} (n={n}, eps={eps}, min_pts={min_pts}) differs at {at:?}"));
                }
                clusters_seen += want.iter().flatten().collect::<BTreeSet<_>>().len();
                runs += 1;
            }
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "{runs} runs over 50 instances identical ({clusters_seen} clusters total), {:?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- filters

fn scored(id: String, text: f64, visual: Option<f64>) -> Candidate {
    let src = format!("Screen {{ Text \"{id}\" }}");
    Candidate {
        candidate_id: id.clone(),
        description_id: id.clone(),
        description: id,
        profile_id: None,
        source_ref: BlobRef::of(src.as_bytes(), MediaKind::ProgramSource),
        outcome: CompileOutcome::new(vec![], 1),
        repaired: false,
        render: None,
        render_vec: None,
        score: Some(RelevanceScore::from_parts(text, visual)),
        iteration: 0,
    }
}

fn reference_filter(batch: &[(String, f64, Option<f64>)], min_text: f64, min_visual: f64, per_mille: usize) -> Vec<String> {
    let mut kept: Vec<(String, f64)> = batch
        .iter()
        .filter(|(_, t, v)| *t >= min_text && v.map(|v| v >= min_visual).unwrap_or(true))
        .map(|(id, t, v)| (id.clone(), v.map(|v| (t + v) / 2.0).unwrap_or(*t)))
        .collect();
    kept.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let n = kept.len();
    let k = if n == 0 { 0 } else { (per_mille * n).div_ceil(1000).clamp(1, n) };
    kept.truncate(k);
    kept.into_iter().map(|(id, _)| id).collect()
}

fn score_filter_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(0..=20) as f64 * 0.05;
    let per_milles = [5, 10, 100, 250, 333, 500, 667, 750, 999, 1000];
    let mut kept_total = 0;
    for b in 0..100 {
        let n = match b {
            0 | 1 => 1,
            _ => rng.random_range(1..=40),
        };
        let tied = b == 2 || b == 3;
        let batch: Vec<(String, f64, Option<f64>)> = (0..n)
            .map(|i| {
                let id = format!("c{:03}", (i * 37 + b) % 1000);
                if tied {
                    (id, 0.6, Some(0.8))
                } else {
                    let text = grid(&mut rng);
                    let visual = rng.random_bool(0.5).then(|| grid(&mut rng));
                    (id, text, visual)
                }
            })
            .collect();
        let cfg = FilterConfig {
            min_text_sim: [0.0, 0.2, 0.35, 0.5][rng.random_range(0..4)],
            min_visual_sim: [0.5, 0.75][rng.random_range(0..2)],
            keep_top_percentile: per_milles[b % per_milles.len()] as f64 / 10.0,
            ..FilterConfig::default()
        };
        let per_mille = per_milles[b % per_milles.len()];
        let want = reference_filter(&batch, cfg.min_text_sim, cfg.min_visual_sim, per_mille);
        let mut input: Vec<Candidate> = batch.iter().map(|(id, t, v)| scored(id.clone(), *t, *v)).collect();
        input.shuffle(&mut rng);
        let got: Vec<String> = score_filter(input, &cfg)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|c| c.candidate_id)
            .collect();
        ensure(got == want, || format!("batch {b} (n={n}): got {got:?}, want {want:?}"))?;
        kept_total += got.len();
    }
    Ok(format!("100 batches identical, {kept_total} candidates kept"))
}

// ---------------------------------------------------------------- ranking

fn ranked_candidate(id: String, rng: &mut ChaCha8Rng) -> (Candidate, f64) {
    let mut c = scored(id, 0.0, None);
    if rng.random_bool(0.5) {
        let s = rng.random_range(0..=10) as f64 / 10.0;
        c.score = Some(RelevanceScore::from_parts(s, None));
        (c, s)
    } else {
        let total = rng.random_range(0..=12);
        let mut diags = vec![Diagnostic::error(1, None, "E_X", "x")];
        for _ in 0..rng.random_range(0..6) {
            let line = rng.random_range(1..=total.max(1));
            if rng.random_bool(0.3) {
                diags.push(Diagnostic::warning(line, None, "W_X", "w"));
            } else {
                diags.push(Diagnostic::error(line, None, "E_X", "x"));
            }
        }
        let bad: BTreeSet<usize> = diags.iter().filter(|d| d.code == "E_X").map(|d| d.line).collect();
        let key = if total == 0 {
            0.0
        } else {
            (total - bad.len()) as f64 / total as f64
        };
        c.outcome = CompileOutcome::new(diags, total);
        c.score = None;
        (c, key)
    }
}

fn ranking_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for set in 0..1000 {
        let n = rng.random_range(1..=10);
        let mut keys: HashMap<String, (bool, f64)> = HashMap::new();
        let cands: Vec<Candidate> = (0..n)
            .map(|i| {
                let (c, key) = ranked_candidate(format!("s{set}-v{i}"), &mut rng);
                keys.insert(c.candidate_id.clone(), (c.outcome.success, key));
                c
            })
            .collect();
        let ranked = rank_candidates(&cands).map_err(|e| e.to_string())?;
        let order: Vec<(bool, f64, &str)> = ranked
            .ordered()
            .into_iter()
            .map(|id| (keys[id].0, keys[id].1, id))
            .collect();
        ensure(order.len() == n && order.iter().map(|o| o.2).collect::<BTreeSet<_>>().len() == n, || {
            format!("set {set}: not a permutation")
        })?;
        for w in order.windows(2) {
            let ((ca, ka, ia), (cb, kb, ib)) = (w[0], w[1]);
            ensure(ca || !cb, || format!("set {set}: {ib} compiles but ranks below {ia}"))?;
            if ca == cb {
                ensure(ka > kb || (ka == kb && ia < ib), || {
                    format!("set {set}: {ia} ({ka}) before {ib} ({kb})")
                })?;
            }
        }
    }
    for n in 2..=10usize {
        let cands: Vec<Candidate> = (0..n).map(|i| scored(format!("p{i}"), i as f64 / 10.0, None)).collect();
        let ranked = rank_candidates(&cands).map_err(|e| e.to_string())?;
        let pos: HashMap<&str, usize> = ranked.ordered().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        for (mode, want) in [
            (PairMode::Adjacent, n - 1),
            (PairMode::TopVsRest, n - 1),
            (PairMode::AllOrdered, n * (n - 1) / 2),
        ] {
            let pairs = to_preference_pairs(&ranked, mode);
            ensure(pairs.len() == want, || format!("{mode:?} n={n}: {} pairs", pairs.len()))?;
            ensure(pairs.iter().all(|p| pos[p.chosen.as_str()] < pos[p.rejected.as_str()]), || {
                format!("{mode:?} n={n}: chosen ranked below rejected")
            })?;
        }
    }
    Ok("1000 sets lawful, pair counts n-1 / n-1 / n(n-1)/2 for n in 2..=10".into())
}

// ---------------------------------------------------------------- error-free fraction

/// (source, total lines, distinct error lines)
const EFF_CORPUS: [(&str, usize, usize); 20] = [
    ("Screen {\n  VStack {\n    Text \"Hi\"\n  }\n}\n", 5, 0),
    ("// login\nScreen {\n\n  Button \"Go\"\n  Spacer\n}", 6, 0),
    ("Screen {\n  VStack {\n    Txt \"Hi\"\n  }\n}", 5, 1),
    ("Screen {\n  Txt \"a\"\n  Buton \"b\"\n  Text \"c\"\n}", 5, 2),
    ("Screen {\n  Carousel \"a\" Slider \"b\"\n}", 3, 1),
    ("Screen {\n  Text \"abc\n  Button \"Go\"\n}", 4, 1),
    ("Screen {\n  Text \"a\"\n}\n}", 4, 1),
    ("Screen {\n  VStack {\n    Text \"a\"\n  }\n", 4, 1),
    ("VStack {\n  Text \"a\"\n}", 3, 1),
    ("Screen {\n  Screen {\n    Text \"a\"\n  }\n}", 5, 1),
    ("Screen {\n  Text\n  Button \"b\"\n}", 4, 1),
    ("Screen {\n  Text hello\n}", 3, 1),
    ("Screen {\n  Text \"a\";\n}", 3, 1),
    ("Screen {\n  VStack {\n  }\n  Text \"\"\n}", 5, 0),
    ("Screen {\n  \"loose\"\n  Text \"a\"\n}", 4, 1),
    ("Screen {\n  VStack\n  Text \"a\"\n}", 4, 1),
    ("\n\n", 2, 1),
    (
        "Screen {\n  Txt \"1\"\n  Text \"2\"\n  Txt \"3\"\n  Text \"4\"\n  Txt \"5\"\n  Text \"6\"\n  Txt \"7\"\n  Spacer\n}",
        10,
        4,
    ),
    ("Screen {\n  VStack {\n  }\n  Txt \"x\"\n}", 5, 1),
    ("Screen {\n  Carousel {\n    Text \"a\"\n    Txet \"b\"\n  }\n}", 6, 2),
];

fn error_free_corpus() -> Check {
    for (i, (src, total, bad)) in EFF_CORPUS.iter().enumerate() {
        let outcome = MiniUiCompiler.compile(src).map_err(|e| e.to_string())?;
        ensure(outcome.total_lines == *total, || {
            format!("program {i}: {} lines, want {total}", outcome.total_lines)
        })?;
        ensure(outcome.success == (*bad == 0), || format!("program {i}: success = {}", outcome.success))?;
        let got = error_free_fraction(&outcome).map_err(|e| e.to_string())?;
        let want = (total - bad) as f64 / *total as f64;
        ensure((got - want).abs() < 1e-12, || {
            format!("program {i}: fraction {got}, want {}/{total}", total - bad)
        })?;
    }
    Ok("20/20 programs match".into())
}

// ---------------------------------------------------------------- repair

const LEAVES: [&str; 4] = ["Text", "Button", "Image", "Spacer"];
const CONTAINERS: [&str; 3] = ["VStack", "HStack", "List"];
const MISSPELLED: [(&str, &str); 6] = [
    ("Text", "Txet"),
    ("Button", "Buton"),
    ("Image", "Imagee"),
    ("VStack", "VStak"),
    ("HStack", "HStck"),
    ("List", "Lst"),
];

fn gen_nodes(rng: &mut ChaCha8Rng, depth: usize, indent: usize, out: &mut Vec<String>) {
    let pad = "  ".repeat(indent);
    for _ in 0..rng.random_range(1..=3) {
        if depth < 2 && rng.random_bool(0.4) {
            out.push(format!("{pad}{} {{", CONTAINERS[rng.random_range(0..3)]));
            gen_nodes(rng, depth + 1, indent + 1, out);
            out.push(format!("{pad}}}"));
        } else {
            match LEAVES[rng.random_range(0..4)] {
                "Spacer" => out.push(format!("{pad}Spacer")),
                leaf => out.push(format!("{pad}{leaf} \"item {}\"", rng.random_range(0..100))),
            }
        }
    }
}

fn gen_program(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut lines = vec!["Screen {".to_string()];
    gen_nodes(rng, 0, 1, &mut lines);
    lines.push("}".into());
    lines
}

/// One fault per program: a dropped closing brace, a doubled closing
/// brace, or a misspelled component name.
fn inject(rng: &mut ChaCha8Rng, lines: &[String], kind: usize) -> Option<Vec<String>> {
    let mut out = lines.to_vec();
    match kind {
        0 | 1 => {
            let closers: Vec<usize> = (0..lines.len()).filter(|&i| lines[i].trim() == "}").collect();
            let at = closers[rng.random_range(0..closers.len())];
            if kind == 0 {
                out[at] = out[at].replace('}', "");
            } else {
                out.insert(at + 1, lines[at].clone());
            }
        }
        _ => {
            let spots: Vec<(usize, &str, &str)> = lines
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    let word = l.split_whitespace().next().unwrap_or("");
                    MISSPELLED.iter().filter(move |(good, _)| *good == word).map(move |(g, b)| (i, *g, *b))
                })
                .collect();
            if spots.is_empty() {
                return None;
            }
            let (i, good, bad) = spots[rng.random_range(0..spots.len())];
            out[i] = out[i].replacen(good, bad, 1);
        }
    }
    Some(out)
}

fn repair_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rules = default_rules();
    let compiler = MiniUiCompiler;
    let (mut faulty_total, mut fixed, mut regressions, mut touched_unreferenced) = (0, 0, 0, Vec::new());
    for p in 0..120 {
        let clean = gen_program(&mut rng);
        let clean_src = clean.join("\n");
        let outcome = compiler.compile(&clean_src).map_err(|e| e.to_string())?;
        if !outcome.success {
            return Err(format!("generated program {p} does not compile:\n{clean_src}"));
        }
        let (after, report) = apply_repairs(&clean_src, &rules, &compiler, 3).map_err(|e| e.to_string())?;
        if after != clean_src || !report.applied.is_empty() {
            regressions += 1;
        }

        let Some(broken) = inject(&mut rng, &clean, p % 3) else {
            continue;
        };
        let broken_src = broken.join("\n");
        let diag = compiler.compile(&broken_src).map_err(|e| e.to_string())?;
        if diag.success {
            continue;
        }
        faulty_total += 1;
        let referenced: BTreeSet<usize> = diag.diagnostics.iter().map(|d| d.line).collect();
        let (repaired, _) = apply_repairs(&broken_src, &rules, &compiler, 3).map_err(|e| e.to_string())?;
        if compiler.compile(&repaired).map_err(|e| e.to_string())?.success {
            fixed += 1;
        }
        let new_lines: Vec<&str> = repaired.lines().collect();
        for (i, old) in broken_src.lines().enumerate() {
            if new_lines.get(i) != Some(&old) && !referenced.contains(&(i + 1)) {
                touched_unreferenced.push(format!("program {p} line {}", i + 1));
            }
        }
    }
    let rate = fixed as f64 / faulty_total as f64;
    ensure(regressions == 0, || format!("{regressions} clean programs changed"))?;
    ensure(touched_unreferenced.is_empty(), || format!("unreferenced edits: {touched_unreferenced:?}"))?;
    ensure(rate >= 0.9, || format!("repaired {fixed}/{faulty_total}"))?;
    Ok(format!(
        "repaired {fixed}/{faulty_total} ({:.1}%), 0 unreferenced edits, 0/120 regressions",
        rate * 100.0
    ))
}

// ---------------------------------------------------------------- end to end

fn end_to_end() -> Check {
    let start = Instant::now();
    let run = |extra: &str| -> Result<(tempfile::TempDir, RunConfig), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let fx = common::write_fixture(dir.path(), extra);
        let cfg = RunConfig::load(&fx.config).map_err(|e| e.to_string())?;
        Ok((dir, cfg))
    };
    let lines = |cfg: &RunConfig| -> Result<BTreeSet<String>, String> {
        Ok(fs::read_to_string(export_path(&cfg.store_dir, 1))
            .map_err(|e| e.to_string())?
            .lines()
            .map(str::to_string)
            .collect())
    };

    let (_a, cfg_a) = run("")?;
    let first = run_iteration(&cfg_a, 1).map_err(|e| e.to_string())?;
    let c = &first.counts;
    ensure(c.compiled == common::COMPILING, || format!("compiled {}", c.compiled))?;
    ensure(c.passed_percentile == common::TOP_HALF, || format!("passed_percentile {}", c.passed_percentile))?;
    ensure(c.after_dedup == common::AFTER_DEDUP, || format!("after_dedup {}", c.after_dedup))?;

    let (_b, cfg_b) = run("")?;
    let second = run_iteration(&cfg_b, 1).map_err(|e| e.to_string())?;
    let digest = |m: &refinery_core::orchestrator::IterationManifest| m.shard.as_ref().map(|s| s.key.clone());
    ensure(digest(&first).is_some() && digest(&first) == digest(&second), || {
        format!("shard digests {:?} vs {:?}", digest(&first), digest(&second))
    })?;

    let (_c, cfg_c) = run("")?;
    let adapters = AdapterSet::from_config(&cfg_c).map_err(|e| e.to_string())?;
    let crash = RunOptions {
        crash_after_jobs: Some(150),
        ..RunOptions::default()
    };
    match run_iteration_with(&cfg_c, 1, &adapters, &crash) {
        Err(refinery_core::orchestrator::OrchestratorError::Interrupted(_)) => {}
        other => return Err(format!("expected an interrupted run, got {other:?}")),
    }
    let resumed = run_iteration_with(&cfg_c, 1, &adapters, &RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(lines(&cfg_c)? == lines(&cfg_a)?, || "resumed record set differs".into())?;
    ensure(resumed.counts == first.counts, || "resumed counts differ".into())?;
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "compiled {}, passed_percentile {}, after_dedup {}, digest {}, resume identical, {:?}",
        c.compiled,
        c.passed_percentile,
        c.after_dedup,
        &digest(&first).unwrap_or_default()[..12],
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- queue

fn payload(n: usize) -> BlobRef {
    BlobRef::of(format!("job {n}").as_bytes(), MediaKind::JobPayload)
}

fn queue_redelivery() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let clock = Arc::new(ManualClock::new(1_000));
    let q = FsJobQueue::with_clock(dir.path(), clock.clone()).map_err(|e| e.to_string())?;
    let timeout = Duration::from_millis(500);
    q.enqueue_with_id("only", JobKind::Generate, payload(0)).map_err(|e| e.to_string())?;
    let first = q.lease_job(JobKind::Generate, timeout).map_err(|e| e.to_string())?.ok_or("nothing leased")?;
    clock.advance(499);
    ensure(q.lease_job(JobKind::Generate, timeout).map_err(|e| e.to_string())?.is_none(), || {
        "redelivered before the timeout".into()
    })?;
    clock.advance(1);
    let again = q.lease_job(JobKind::Generate, timeout).map_err(|e| e.to_string())?.ok_or("not redelivered")?;
    ensure(again.job_id == first.job_id && again.attempts == 2, || format!("redelivered {again:?}"))?;
    ensure(q.complete_job("only").map_err(|e| e.to_string())?, || "first completion refused".into())?;
    ensure(!q.complete_job("only").map_err(|e| e.to_string())?, || "second completion accepted".into())?;

    // four workers, a quarter of leases stall past their timeout
    const JOBS: usize = 120;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let q = Arc::new(FsJobQueue::open(dir.path().join("queue")).map_err(|e| e.to_string())?);
    let ds = Arc::new(Dataset::open(dir.path(), "effects").map_err(|e| e.to_string())?);
    for n in 0..JOBS {
        q.enqueue_with_id(&format!("job-{n:03}"), JobKind::Score, payload(n))
            .map_err(|e| e.to_string())?;
    }
    let completions: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
    let appended: Arc<Mutex<usize>> = Arc::default();
    let redelivered: Arc<Mutex<usize>> = Arc::default();
    let handles: Vec<_> = (0..4u64)
        .map(|w| {
            let (q, ds) = (q.clone(), ds.clone());
            let (completions, appended, redelivered) = (completions.clone(), appended.clone(), redelivered.clone());
            thread::spawn(move || -> Result<(), String> {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                let timeout = Duration::from_millis(40);
                loop {
                    let Some(job) = q.lease_job(JobKind::Score, timeout).map_err(|e| e.to_string())? else {
                        if q.pending(JobKind::Score).map_err(|e| e.to_string())? == 0 {
                            return Ok(());
                        }
                        thread::sleep(Duration::from_millis(5));
                        continue;
                    };
                    if job.attempts > 1 {
                        *redelivered.lock().unwrap() += 1;
                    }
                    let rec = DatasetRecord::new(&job.job_id, "d");
                    if ds.append_if_absent(&rec).map_err(|e| e.to_string())? {
                        *appended.lock().unwrap() += 1;
                    }
                    if job.attempts == 1 && rng.random_bool(0.25) {
                        thread::sleep(Duration::from_millis(60));
                    }
                    if q.complete_job(&job.job_id).map_err(|e| e.to_string())? {
                        *completions.lock().unwrap().entry(job.job_id).or_default() += 1;
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| "worker panicked")??;
    }
    let completions = completions.lock().unwrap();
    let records = ds.read_all().map_err(|e| e.to_string())?;
    let unique: BTreeSet<_> = records.iter().map(|r| r.record_id.clone()).collect();
    ensure(completions.len() == JOBS && completions.values().all(|&c| c == 1), || {
        format!("{} jobs completed, counts {:?}", completions.len(), completions.values().max())
    })?;
    ensure(records.len() == JOBS && unique.len() == JOBS, || {
        format!("{} effect records ({} unique)", records.len(), unique.len())
    })?;
    ensure(*appended.lock().unwrap() == JOBS, || "effect applied more than once".into())?;
    let redelivered = *redelivered.lock().unwrap();
    ensure(redelivered > 0, || "no lease ever expired; interleaving not exercised".into())?;
    Ok(format!(
        "redelivered at the deadline; 4 workers, {JOBS} jobs, {redelivered} redeliveries, each completed once"
    ))
}

// ---------------------------------------------------------------- prompts

fn prompt_templates() -> Check {
    let t = PromptTemplates::default();
    let scoring = t.build_scoring_prompt("a login page").map_err(|e| e.to_string())?;
    let generation = t.build_generation_prompt("a login page").map_err(|e| e.to_string())?;
    let want_scoring =
        "mobile user interface. well-designed. design awards winner. detailed app. featured screenshot. a login page.";
    let want_generation = "Generate all required code that uses image assets and realistic placeholder data for a SwiftUI view named ContentView with the following description: \"a login page.\"";
    ensure(scoring == want_scoring, || format!("scoring prompt {scoring:?}"))?;
    ensure(generation == want_generation, || format!("generation prompt {generation:?}"))?;
    Ok("scoring and generation prompts byte-identical".into())
}

fn main() -> ExitCode {
    let checks: [Named; 11] = [
        ("elo_algebra", elo_algebra),
        ("elo_recovery", elo_recovery),
        ("auto_outcome_rules", auto_outcomes),
        ("dbscan_oracle", dbscan_oracle),
        ("score_filter_oracle", score_filter_oracle),
        ("ranking_law", ranking_law),
        ("error_free_fraction", error_free_corpus),
        ("repair_soundness", repair_soundness),
        ("end_to_end_iteration", end_to_end),
        ("queue_redelivery", queue_redelivery),
        ("prompt_templates", prompt_templates),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
