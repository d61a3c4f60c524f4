//! Self-training data refinery for description-to-UI-code pairs.
//!
//! Raw generator output flows through a fixed chain: heuristic repair and
//! compilation, rendering, embedding-based relevance scoring, percentile
//! filtering, and density-based de-duplication. The surviving pairs are
//! exported as dataset shards for an external trainer. A separate evaluation
//! arena computes compile rates, mean relevance, and Elo ratings from blinded
//! pairwise comparisons.
//!
//! Module map:
//!
//! - [`store`]: content-addressed blobs, append-only JSONL datasets, and an
//!   at-least-once job queue with visibility timeouts.
//! - [`adapters`]: generator / compiler / renderer / embedder contracts plus
//!   the MiniUI reference toolchain and a token-hash embedder.
//! - [`repair`]: regex-and-line-number program repair driven by diagnostics.
//! - [`scoring`]: prompt templates, relevance scores, error-free fraction.
//! - [`candidate`]: the per-sample unit and the workbench that produces it.
//! - [`refine`]: compilation filter, score filter, DBSCAN de-duplication.
//! - [`prefs`]: multi-profile variants, ranking, preference-pair export.
//! - [`arena`]: evaluation metrics, Elo, and the blinded pairing service.
//! - [`orchestrator`]: configuration, the iteration loop, eval, reporting.

pub mod adapters;
pub mod arena;
pub mod candidate;
pub mod orchestrator;
pub mod prefs;
pub mod refine;
pub mod repair;
pub mod scoring;
pub mod store;

pub use adapters::{
    CompileOutcome, Compiler, Diagnostic, Embedder, EmbeddingVector, Generator, RenderArtifact,
    Renderer, SamplingProfile, Severity,
};

pub use candidate::Candidate;
pub use store::{BlobRef, BlobStore, FsBlobStore, MediaKind};
