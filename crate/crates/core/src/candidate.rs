//! The per-sample unit flowing through every filter, and the workbench that
//! takes a raw completion through repair, compile, render and scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    AdapterError, CompileOutcome, Compiler, Embedder, EmbeddingVector, RenderArtifact, Renderer,
};
use crate::repair::{apply_repairs, RepairError, RepairRule};
use crate::scoring::{relevance_score, RelevanceScore, ScoringError};
use crate::store::{BlobRef, BlobStore, MediaKind, StoreError};

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl CandidateError {
    pub fn is_transient(&self) -> bool {
        match self {
            CandidateError::Adapter(e) => e.is_transient(),
            CandidateError::Store(e) => e.is_transient(),
            CandidateError::Repair(RepairError::Compiler(e)) => e.is_transient(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub description_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
    pub source_ref: BlobRef,
    pub outcome: CompileOutcome,
    /// At least one repair rule changed the generated source.
    #[serde(default)]
    pub repaired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_vec: Option<EmbeddingVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<RelevanceScore>,
    pub iteration: u32,
}

impl Candidate {
    pub fn combined(&self) -> Option<f64> {
        self.score.map(|s| s.combined)
    }

    /// An empty, non-compiling stand-in for a generation that failed.
    pub fn failed(
        candidate_id: impl Into<String>,
        description_id: impl Into<String>,
        description: impl Into<String>,
        iteration: u32,
    ) -> Self {
        Candidate {
            candidate_id: candidate_id.into(),
            description_id: description_id.into(),
            description: description.into(),
            profile_id: None,
            source_ref: BlobRef::of(b"", MediaKind::ProgramSource),
            outcome: CompileOutcome::new(
                vec![crate::Diagnostic::error(
                    1,
                    None,
                    crate::adapters::miniui::codes::E_EMPTY,
                    "generation failed",
                )],
                0,
            ),
            repaired: false,
            render: None,
            render_vec: None,
            score: None,
            iteration,
        }
    }
}

/// Identity of a sample before it has a compiled outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleInfo<'a> {
    pub candidate_id: &'a str,
    pub description_id: &'a str,
    pub description: &'a str,
    pub profile_id: Option<&'a str>,
    pub iteration: u32,
}

/// Bundles the adapters and repair settings for candidate evaluation.
///
/// With a store attached, program sources and render artifacts are written
/// as blobs; without one only their refs are computed.
pub struct Workbench<'a> {
    pub compiler: &'a dyn Compiler,
    pub renderer: &'a dyn Renderer,
    pub embedder: &'a dyn Embedder,
    /// Empty disables repair.
    pub rules: &'a [RepairRule],
    pub max_repair_rounds: u32,
    pub store: Option<&'a dyn BlobStore>,
}

impl Workbench<'_> {
    fn put(&self, bytes: &[u8], kind: MediaKind) -> Result<BlobRef, CandidateError> {
        match self.store {
            Some(store) if !bytes.is_empty() => Ok(store.put_blob(bytes, kind)?),
            _ => Ok(BlobRef::of(bytes, kind)),
        }
    }

    /// Repairs (if enabled) and compiles `source`. Returns the final source.
    pub fn compile(
        &self,
        info: &SampleInfo<'_>,
        source: &str,
    ) -> Result<(Candidate, String), CandidateError> {
        let (final_source, repaired) = if !self.rules.is_empty() && !source.is_empty() {
            let (fixed, report) =
                apply_repairs(source, self.rules, self.compiler, self.max_repair_rounds.max(1))?;
            let changed = !report.applied.is_empty();
            (fixed, changed)
        } else {
            (source.to_string(), false)
        };
        let outcome = self.compiler.compile(&final_source)?;
        let source_ref = self.put(final_source.as_bytes(), MediaKind::ProgramSource)?;
        let candidate = Candidate {
            candidate_id: info.candidate_id.to_string(),
            description_id: info.description_id.to_string(),
            description: info.description.to_string(),
            profile_id: info.profile_id.map(str::to_string),
            source_ref,
            outcome,
            repaired,
            render: None,
            render_vec: None,
            score: None,
            iteration: info.iteration,
        };
        Ok((candidate, final_source))
    }

    /// Renders and embeds a compiling candidate. A render whose descriptor
    /// has no embeddable tokens stays without `render_vec`; a program the
    /// renderer rejects stays without `render`.
    pub fn render(&self, candidate: &mut Candidate, source: &str) -> Result<(), CandidateError> {
        if !candidate.outcome.success {
            return Ok(());
        }
        let artifact = match self.renderer.render(source) {
            Ok(a) => a,
            // the compiler accepted a program the renderer cannot parse
            Err(AdapterError::Precondition(msg)) => {
                log::warn!("{}: not rendered: {msg}", candidate.candidate_id);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        self.put(&artifact.to_bytes(), MediaKind::RenderArtifact)?;
        candidate.render_vec = match self.embedder.embed_render(&artifact) {
            Ok(v) => Some(v),
            Err(AdapterError::ZeroVector) => None,
            Err(e) => return Err(e.into()),
        };
        candidate.render = Some(artifact);
        Ok(())
    }

    /// Scores a compiling candidate. A missing description or render
    /// embedding (no content tokens) counts as similarity 0.
    pub fn score(
        &self,
        candidate: &mut Candidate,
        desc_vec: Option<&EmbeddingVector>,
        gt_vec: Option<&EmbeddingVector>,
    ) -> Result<(), CandidateError> {
        if !candidate.outcome.success {
            return Ok(());
        }
        candidate.score = Some(match (desc_vec, &candidate.render_vec) {
            (Some(d), Some(r)) => relevance_score(d, r, gt_vec)?,
            (None, Some(r)) => {
                let visual = gt_vec.map(|g| r.cosine(g)).transpose()?;
                RelevanceScore::from_parts(0.0, visual)
            }
            (_, None) => RelevanceScore::from_parts(0.0, gt_vec.map(|_| 0.0)),
        });
        Ok(())
    }

    /// Embedding of the description text used for scoring.
    pub fn description_vec(&self, description: &str) -> Result<Option<EmbeddingVector>, CandidateError> {
        match self.embedder.embed_text(description) {
            Ok(v) => Ok(Some(v)),
            Err(AdapterError::ZeroVector | AdapterError::EmptyInput) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Embedding of a ground-truth reference program's render.
    pub fn reference_vec(&self, reference_source: &str) -> Result<Option<EmbeddingVector>, CandidateError> {
        if !self.compiler.compile(reference_source)?.success {
            log::warn!("reference program does not compile; scoring without it");
            return Ok(None);
        }
        let artifact = self.renderer.render(reference_source)?;
        match self.embedder.embed_render(&artifact) {
            Ok(v) => Ok(Some(v)),
            Err(AdapterError::ZeroVector) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// All stages in one call.
    pub fn evaluate(
        &self,
        info: &SampleInfo<'_>,
        source: &str,
        gt_vec: Option<&EmbeddingVector>,
    ) -> Result<Candidate, CandidateError> {
        let (mut candidate, final_source) = self.compile(info, source)?;
        self.render(&mut candidate, &final_source)?;
        let desc_vec = self.description_vec(info.description)?;
        self.score(&mut candidate, desc_vec.as_ref(), gt_vec)?;
        Ok(candidate)
    }
}
