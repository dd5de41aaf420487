//! Embedding providers and the on-disk embedding store.

mod reference;
mod service;
mod store;

pub use reference::{embed_sequence, reference_token_vector, ReferenceEmbedder, DEFAULT_DIM};
pub use service::{ServiceClient, ServiceError, DEFAULT_BATCH_SIZE};
pub use store::{read_store, write_store, EmbeddingStore, StoreError, MAGIC, VERSION};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("sequence has no non-padding tokens")]
    AllPadding,
    #[error("pooled embedding has zero norm")]
    ZeroNorm,
}

/// A dense vector. Components are stored at single precision; similarity
/// math widens to `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Unit-length copy computed in `f64`; `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| Self(self.0.iter().map(|&x| (f64::from(x) / n) as f32).collect()))
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

/// Where embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// Hashed bag-of-tokens embedder over the reference tokenizer.
    Reference {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Corpus vectors read from `<dir>/<dataset>.dre`; queries embedded with
    /// the reference embedder at the store's dimension.
    File {
        dir: std::path::PathBuf,
        #[serde(default)]
        seed: u64,
    },
    /// Remote embedding service speaking the `/tokenize` + `/embed` protocol.
    Service {
        endpoint: String,
        model: String,
        /// Size of the model's token space; perturbed ids wrap modulo this.
        vocab_size: u32,
        /// Model-specific framing ids left alone when specials are excluded.
        #[serde(default)]
        special_ids: Vec<u32>,
        #[serde(default = "default_batch")]
        batch_size: usize,
        /// Optional directory of pre-exported corpus stores.
        #[serde(default)]
        store_dir: Option<std::path::PathBuf>,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

impl ProviderConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Reference { .. } => "reference",
            Self::File { .. } => "file",
            Self::Service { .. } => "service",
        }
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::Reference {
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}
