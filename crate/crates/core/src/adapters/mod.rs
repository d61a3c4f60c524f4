//! Contracts for the four external capabilities the refinery depends on,
//! plus deterministic reference implementations.
//!
//! | capability | contract      | reference                         | external              |
//! |------------|---------------|-----------------------------------|-----------------------|
//! | generator  | [`Generator`] | [`ScriptedGenerator`]             | [`HttpGenerator`]     |
//! | compiler   | [`Compiler`]  | [`MiniUiCompiler`]                | [`ExternalCompiler`]  |
//! | renderer   | [`Renderer`]  | [`MiniUiRenderer`]                | -                     |
//! | embedder   | [`Embedder`]  | [`HashEmbedder`]                  | -                     |

mod embed;
mod external;
mod generator;
pub mod miniui;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{BlobRef, MediaKind};

pub use embed::{tokenize, HashEmbedder, DEFAULT_EMBEDDING_DIM};
pub use external::ExternalCompiler;
pub use generator::{truncate_at_stop, HttpGenerator, ScriptedGenerator};
pub use miniui::{MiniUiCompiler, MiniUiRenderer};

#[derive(Debug, Error)]
pub enum AdapterError {
    /// Endpoint timeout, unreachable host, etc. The job should be retried.
    #[error("transient adapter failure: {0}")]
    Transient(String),
    /// Misconfiguration that retrying cannot fix (missing binary, bad URL).
    #[error("adapter configuration error: {0}")]
    Config(String),
    #[error("generator returned an empty completion")]
    EmptyOutput,
    #[error("input must be non-empty")]
    EmptyInput,
    #[error("embedding has no usable tokens (zero vector cannot be normalized)")]
    ZeroVector,
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no scripted completion for profile `{profile_id}` and prompt digest {prompt_digest}")]
    NoFixture {
        prompt_digest: String,
        profile_id: String,
    },
    #[error("adapter i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl AdapterError {
    pub fn is_transient(&self) -> bool {
        matches!(self, AdapterError::Transient(_))
    }
}

/// Decoding parameters for one generator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingProfile {
    pub profile_id: String,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub stop_token: String,
    pub max_tokens: u32,
}

pub const DEFAULT_STOP_TOKEN: &str = "<|end|>";
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

impl SamplingProfile {
    /// Temperature 0.2, top-k 70, top-p 0.85.
    pub fn standard() -> Self {
        SamplingProfile {
            profile_id: "default".into(),
            temperature: 0.2,
            top_k: 70,
            top_p: 0.85,
            stop_token: DEFAULT_STOP_TOKEN.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn greedy() -> Self {
        SamplingProfile {
            profile_id: "greedy".into(),
            temperature: 0.0,
            top_k: 1,
            top_p: 1.0,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.profile_id.is_empty() {
            return Err(AdapterError::Config("profile_id must be non-empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(AdapterError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(AdapterError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == 0 || self.max_tokens == 0 {
            return Err(AdapterError::Config(
                "top_k and max_tokens must be positive".into(),
            ));
        }
        if self.stop_token.is_empty() {
            return Err(AdapterError::Config("stop_token must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// 1-based.
    pub line: usize,
    /// 1-based, when the compiler reports one.
    pub column: Option<usize>,
    pub code: String,
    pub message: String,
    pub severity: Severity,
}

impl Diagnostic {
    pub fn error(line: usize, column: Option<usize>, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            column,
            code: code.to_string(),
            message: message.into(),
            severity: Severity::Error,
        }
    }

    pub fn warning(line: usize, column: Option<usize>, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Self::error(line, column, code, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub success: bool,
    pub diagnostics: Vec<Diagnostic>,
    pub total_lines: usize,
}

impl CompileOutcome {
    /// Success is derived: no error-severity diagnostics.
    pub fn new(diagnostics: Vec<Diagnostic>, total_lines: usize) -> Self {
        CompileOutcome {
            success: !diagnostics.iter().any(Diagnostic::is_error),
            diagnostics,
            total_lines,
        }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }
}

/// Line count used everywhere: `str::lines`, so blank interior lines count
/// and a trailing newline does not add a line.
pub fn count_lines(source: &str) -> usize {
    source.lines().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Screen,
    VStack,
    HStack,
    List,
    Text,
    Button,
    Image,
    Spacer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderNode {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset: Option<String>,
    pub frame: Frame,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<RenderNode>,
}

impl RenderNode {
    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&RenderNode> {
        let mut out = vec![self];
        for child in &self.children {
            out.extend(child.walk());
        }
        out
    }
}

/// Structured stand-in for a screenshot: the laid-out widget tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderDescriptor {
    /// Identifier that replaced every image asset name.
    pub placeholder: String,
    pub root: RenderNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderArtifact {
    pub blob: BlobRef,
    pub descriptor: RenderDescriptor,
    pub width_px: u32,
    pub height_px: u32,
}

impl RenderArtifact {
    pub fn from_descriptor(descriptor: RenderDescriptor) -> Self {
        let bytes = descriptor_bytes(&descriptor);
        RenderArtifact {
            blob: BlobRef::of(&bytes, MediaKind::RenderArtifact),
            width_px: descriptor.root.frame.width,
            height_px: descriptor.root.frame.height,
            descriptor,
        }
    }

    /// Canonical serialized form; its digest is `blob.key`.
    pub fn to_bytes(&self) -> Vec<u8> {
        descriptor_bytes(&self.descriptor)
    }
}

fn descriptor_bytes(descriptor: &RenderDescriptor) -> Vec<u8> {
    serde_json::to_vec(descriptor).expect("descriptor serialization is infallible")
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    /// L2-normalizes `raw`; fails on an all-zero or non-finite vector.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, AdapterError> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(AdapterError::ZeroVector);
        }
        let values: Vec<f64> = raw.into_iter().map(|v| v / norm).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(EmbeddingVector { values, norm })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Dot product of two unit vectors, clamped to [-1, 1].
    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, AdapterError> {
        if self.dim() != other.dim() {
            return Err(AdapterError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(dot.clamp(-1.0, 1.0))
    }
}

pub trait Generator: Send + Sync {
    /// Raw completion, possibly running past the stop token.
    fn complete(&self, prompt: &str, profile: &SamplingProfile) -> Result<String, AdapterError>;
}

pub trait Compiler: Send + Sync {
    fn compile(&self, source: &str) -> Result<CompileOutcome, AdapterError>;
}

pub trait Renderer: Send + Sync {
    /// Precondition: `source` compiles.
    fn render(&self, source: &str) -> Result<RenderArtifact, AdapterError>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AdapterError>;
    fn embed_render(&self, artifact: &RenderArtifact) -> Result<EmbeddingVector, AdapterError>;
}

/// Samples a program: completion truncated at the first stop token.
pub fn generate(
    generator: &dyn Generator,
    prompt: &str,
    profile: &SamplingProfile,
) -> Result<String, AdapterError> {
    if prompt.is_empty() {
        return Err(AdapterError::EmptyInput);
    }
    let raw = generator.complete(prompt, profile)?;
    let text = truncate_at_stop(&raw, &profile.stop_token);
    if text.trim().is_empty() {
        return Err(AdapterError::EmptyOutput);
    }
    Ok(text.to_string())
}
