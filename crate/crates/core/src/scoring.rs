//! Prompt templates and relevance scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    generate, AdapterError, CompileOutcome, Embedder, EmbeddingVector, Generator, SamplingProfile,
};
use crate::store::digest_hex;

pub const DESCRIPTION_SLOT: &str = "{description}";
pub const DEFAULT_MIN_SIM: f64 = 0.35;

pub const DEFAULT_SCORING_PREFIX: &str =
    "mobile user interface. well-designed. design awards winner. detailed app. featured screenshot.";
pub const DEFAULT_GENERATION_TEMPLATE: &str = "Generate all required code that uses image assets and realistic placeholder data for a SwiftUI view named ContentView with the following description: \"{description}.\"";
pub const DEFAULT_PARAPHRASE_TEMPLATE: &str = "rewrite the following description of a user interface for clarity \"{description}\". do not add any additional details.";

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("description must not be empty")]
    EmptyDescription,
    #[error("template `{name}` must contain exactly one {{description}} slot, found {found}")]
    TemplateSlots { name: &'static str, found: usize },
    #[error("program has no lines")]
    NoLines,
    #[error("min_sim {0} outside [-1, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub scoring_prefix: String,
    pub generation_template: String,
    pub paraphrase_template: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            scoring_prefix: DEFAULT_SCORING_PREFIX.into(),
            generation_template: DEFAULT_GENERATION_TEMPLATE.into(),
            paraphrase_template: DEFAULT_PARAPHRASE_TEMPLATE.into(),
        }
    }
}

/// Drops trailing whitespace and periods so templates that end the slot
/// with "." never produce "..".
fn normalize(description: &str) -> Result<&str, ScoringError> {
    let d = description.trim_end().trim_end_matches('.').trim_end();
    if d.trim().is_empty() {
        return Err(ScoringError::EmptyDescription);
    }
    Ok(d)
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<(), ScoringError> {
        for (name, t) in [
            ("generation_template", &self.generation_template),
            ("paraphrase_template", &self.paraphrase_template),
        ] {
            let found = t.matches(DESCRIPTION_SLOT).count();
            if found != 1 {
                return Err(ScoringError::TemplateSlots { name, found });
            }
        }
        Ok(())
    }

    pub fn build_scoring_prompt(&self, description: &str) -> Result<String, ScoringError> {
        let d = normalize(description)?;
        Ok(format!("{} {d}.", self.scoring_prefix))
    }

    /// Double quotes inside the description are escaped as `\"`.
    pub fn build_generation_prompt(&self, description: &str) -> Result<String, ScoringError> {
        let d = normalize(description)?;
        Ok(self.generation_template.replace(DESCRIPTION_SLOT, &d.replace('"', "\\\"")))
    }

    pub fn build_paraphrase_prompt(&self, description: &str) -> Result<String, ScoringError> {
        let d = normalize(description)?;
        Ok(self.paraphrase_template.replace(DESCRIPTION_SLOT, &d.replace('"', "\\\"")))
    }

    /// Template digests recorded in manifests.
    pub fn digests(&self) -> [(&'static str, String); 3] {
        [
            ("scoring_prefix", digest_hex(self.scoring_prefix.as_bytes())),
            ("generation_template", digest_hex(self.generation_template.as_bytes())),
            ("paraphrase_template", digest_hex(self.paraphrase_template.as_bytes())),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub text_sim: f64,
    pub visual_sim: Option<f64>,
    pub combined: f64,
}

impl RelevanceScore {
    pub fn from_parts(text_sim: f64, visual_sim: Option<f64>) -> Self {
        let combined = match visual_sim {
            Some(v) => (text_sim + v) / 2.0,
            None => text_sim,
        };
        RelevanceScore {
            text_sim,
            visual_sim,
            combined,
        }
    }
}

pub fn relevance_score(
    desc_vec: &EmbeddingVector,
    render_vec: &EmbeddingVector,
    gt_vec: Option<&EmbeddingVector>,
) -> Result<RelevanceScore, ScoringError> {
    let text_sim = desc_vec.cosine(render_vec)?;
    let visual_sim = gt_vec.map(|g| render_vec.cosine(g)).transpose()?;
    Ok(RelevanceScore::from_parts(text_sim, visual_sim))
}

/// Share of lines free of error diagnostics; warnings do not count.
pub fn error_free_fraction(outcome: &CompileOutcome) -> Result<f64, ScoringError> {
    if outcome.total_lines == 0 {
        return Err(ScoringError::NoLines);
    }
    let bad: BTreeSet<usize> = outcome.errors().map(|d| d.line).collect();
    Ok(1.0 - bad.len() as f64 / outcome.total_lines as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    Accepted { text: String, similarity: f64 },
    Rejected { reason: String, similarity: Option<f64> },
}

impl Augmentation {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Augmentation::Accepted { .. })
    }
}

/// Asks the generator to paraphrase `description` and keeps the result only
/// when its embedding is at least `min_sim` similar to the ground-truth
/// screenshot embedding.
#[allow(clippy::too_many_arguments)]
pub fn augment_description(
    description: &str,
    templates: &PromptTemplates,
    generator: &dyn Generator,
    profile: &SamplingProfile,
    embedder: &dyn Embedder,
    gt_vec: &EmbeddingVector,
    min_sim: f64,
) -> Result<Augmentation, ScoringError> {
    if !(-1.0..=1.0).contains(&min_sim) {
        return Err(ScoringError::BadThreshold(min_sim));
    }
    let prompt = templates.build_paraphrase_prompt(description)?;
    let text = match generate(generator, &prompt, profile) {
        Ok(t) => t.trim().to_string(),
        Err(AdapterError::EmptyOutput) => {
            return Ok(Augmentation::Rejected {
                reason: "empty paraphrase".into(),
                similarity: None,
            })
        }
        Err(e) => return Err(e.into()),
    };
    if text.is_empty() {
        return Ok(Augmentation::Rejected {
            reason: "empty paraphrase".into(),
            similarity: None,
        });
    }
    let vec = match embedder.embed_text(&text) {
        Ok(v) => v,
        Err(AdapterError::ZeroVector | AdapterError::EmptyInput) => {
            return Ok(Augmentation::Rejected {
                reason: "paraphrase has no content tokens".into(),
                similarity: None,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let similarity = vec.cosine(gt_vec)?;
    if similarity >= min_sim {
        Ok(Augmentation::Accepted { text, similarity })
    } else {
        Ok(Augmentation::Rejected {
            reason: format!("similarity {similarity:.4} below {min_sim}"),
            similarity: Some(similarity),
        })
    }
}
