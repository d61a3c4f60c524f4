//! Scripted corpus for end-to-end runs: 100 descriptions, one canned
//! generation each.
//!
//! Layout of the generations (by description index):
//!
//! - 0..30 compile as generated
//! - 30..37 compile after one repair (4 unclosed braces, 3 misspelt `Text`)
//! - 37..100 never compile (unknown components without a close match)
//!
//! Renders carry three pseudo-words picked so unrelated renders stay far
//! apart in embedding space, so only deliberate copies share a DBSCAN
//! cluster. Indices 0/1, 2/3 and 4/5 are such
//! copies, and their descriptions echo the render text exactly, which puts
//! them at the top of the score ranking.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use refinery_core::adapters::HashEmbedder;
use refinery_core::scoring::PromptTemplates;
use refinery_core::Embedder;

pub const TOTAL: usize = 100;
pub const COMPILING: usize = 37;
pub const REPAIRABLE: usize = 7;
pub const DUPLICATE_PAIRS: usize = 3;
/// ceil(0.5 * 37)
pub const TOP_HALF: usize = 19;
pub const AFTER_DEDUP: usize = TOP_HALF - DUPLICATE_PAIRS;

const FILLER: [&str; 8] = ["settings", "profile", "panel", "header", "list", "card", "toolbar", "footer"];

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "su", "do", "fa", "gu", "hi", "ja", "be",
];

fn pseudo_word(mut n: u64) -> String {
    let mut w = String::new();
    for _ in 0..4 {
        w.push_str(SYLLABLES[(n % 16) as usize]);
        n /= 16;
    }
    w
}

/// Three-word label per distinct render, chosen so that no two labels
/// embed closer than cosine 0.4.
static LABELS: LazyLock<Vec<String>> = LazyLock::new(|| {
    let embedder = HashEmbedder::default();
    let mut labels: Vec<String> = Vec::new();
    let mut vecs = Vec::new();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    while labels.len() < TOTAL {
        let label: Vec<String> = (0..3)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                pseudo_word(state >> 33)
            })
            .collect();
        let label = label.join(" ");
        let v = embedder.embed_text(&label).unwrap();
        if v.values.iter().filter(|x| **x != 0.0).count() == 3
            && vecs.iter().all(|o: &refinery_core::EmbeddingVector| o.cosine(&v).unwrap() < 0.4)
        {
            labels.push(label);
            vecs.push(v);
        }
    }
    labels
});

fn words(i: usize) -> String {
    // pairs share their words
    let k = if i < 2 * DUPLICATE_PAIRS { i / 2 * 2 } else { i };
    LABELS[k].clone()
}

pub fn description(i: usize) -> String {
    let w = words(i);
    if i < 2 * DUPLICATE_PAIRS {
        return w;
    }
    let mut d = w;
    for f in 0..(1 + i % 5) {
        let _ = write!(d, " {}", FILLER[(i + f) % FILLER.len()]);
    }
    d
}

pub fn generation(i: usize) -> String {
    let w = words(i);
    match i {
        0..30 => format!("Screen {{\n  VStack {{\n    Text \"{w}\"\n  }}\n}}\n"),
        30..34 => format!("Screen {{\n  VStack {{\n    Text \"{w}\"\n  }}\n"),
        34..37 => format!("Screen {{\n  VStack {{\n    Txt \"{w}\"\n  }}\n}}\n"),
        _ if i.is_multiple_of(2) => format!("Screen {{\n  Carousel \"{w}\"\n}}\n"),
        _ => format!("Screen {{\n  VStack {{\n    Text \"{w}\"\n    VideoPlayer \"clip\"\n  }}\n}}\n"),
    }
}

pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
}

/// Writes descriptions, the generator script and a run config into `dir`.
/// `extra` is appended to the config verbatim.
pub fn write_fixture(dir: &Path, extra: &str) -> Fixture {
    let templates = PromptTemplates::default();
    let mut descs = String::new();
    let mut script = String::new();
    for i in 0..TOTAL {
        let d = description(i);
        descs.push_str(
            &serde_json::json!({"description_id": format!("desc-{i:03}"), "description": d}).to_string(),
        );
        descs.push('\n');
        let prompt = templates.build_generation_prompt(&d).unwrap();
        script.push_str(&serde_json::json!({"prompt": prompt, "completion": generation(i)}).to_string());
        script.push('\n');
    }
    fs::write(dir.join("descriptions.jsonl"), descs).unwrap();
    fs::write(dir.join("generations.jsonl"), script).unwrap();
    let config = dir.join("run.toml");
    fs::write(
        &config,
        format!(
            "store_dir = \"store\"
description_sources = [\"descriptions.jsonl\"]
samples_per_iteration = {TOTAL}
seed = 11
workers = 4
visibility_timeout_ms = 200
generator = \"scripted:generations.jsonl\"
compiler = \"miniui\"
percentile_thresh = 50.0
min_text_sim = 0.35
min_visual_sim = 0.75
dbscan_eps = 0.25
{extra}"
        ),
    )
    .unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        config,
    }
}
