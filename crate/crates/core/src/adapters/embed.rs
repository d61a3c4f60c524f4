use super::{AdapterError, Embedder, EmbeddingVector, NodeKind, RenderArtifact};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "its", "of",
    "on", "or", "that", "the", "this", "to", "with",
];

/// Lowercased alphanumeric word tokens with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing: each token adds +1 or -1 (sign from the top bit of
/// its FNV-1a hash) to bucket `hash % dim`, then the vector is L2-normalized.
///
/// Render embeddings hash the words of `Text` and `Button` labels plus one
/// kind token per `Button`, `Image` and `List` node; pure layout containers
/// contribute nothing.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<EmbeddingVector, AdapterError> {
        if tokens.is_empty() {
            return Err(AdapterError::ZeroVector);
        }
        let mut raw = vec![0.0; self.dim];
        for t in tokens {
            let h = fnv1a64(t.as_ref().as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            raw[(h % self.dim as u64) as usize] += sign;
        }
        EmbeddingVector::normalized(raw)
    }
}

pub(crate) fn render_tokens(artifact: &RenderArtifact) -> Vec<String> {
    let mut tokens = Vec::new();
    for node in artifact.descriptor.root.walk() {
        match node.kind {
            NodeKind::Button => tokens.push("button".to_string()),
            NodeKind::Image => tokens.push("image".to_string()),
            NodeKind::List => tokens.push("list".to_string()),
            _ => {}
        }
        if let Some(text) = &node.text {
            tokens.extend(tokenize(text));
        }
    }
    tokens
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        if text.is_empty() {
            return Err(AdapterError::EmptyInput);
        }
        self.embed_tokens(&tokenize(text))
    }

    fn embed_render(&self, artifact: &RenderArtifact) -> Result<EmbeddingVector, AdapterError> {
        self.embed_tokens(&render_tokens(artifact))
    }
}
