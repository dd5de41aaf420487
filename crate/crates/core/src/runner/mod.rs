//! End-to-end experiments: load datasets, embed, retrieve clean and
//! perturbed queries, evaluate, aggregate and report.

pub mod aggregate;
pub mod config;
pub mod experiment;
pub mod report;
pub mod synthetic;

pub use aggregate::{aggregate_across_datasets, compute_drop, AggregateError, DropRow, DropTable};
pub use config::{ConfigError, DatasetEntry, ExperimentConfig};
pub use experiment::{
    embed_corpus, prepare, run_dataset, run_experiment, Backend, Condition, ConditionResult, DatasetResult,
    ExperimentResult, LoadedDataset, Provenance, RunSettings,
};
pub use report::{emit_report, read_result, ReportError};

use crate::corpus::CorpusError;
use crate::embed::{EmbedError, ServiceError, StoreError};
use crate::metrics::MetricError;
use crate::retrieval::RetrievalError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dataset `{dataset}` failed validation: {dangling} dangling judgments, {duplicates} duplicate ids")]
    Validation {
        dataset: String,
        dangling: usize,
        duplicates: usize,
    },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("provider error: {0}")]
    Provider(String),
}

impl RunError {
    /// Errors from producing embeddings, which abandon a single dataset
    /// rather than the whole experiment.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            RunError::Embed(_) | RunError::Service(_) | RunError::Store(_) | RunError::Provider(_)
        )
    }

    /// Process exit code: 1 for invalid inputs, 2 for provider and IO
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. }) => 2,
            RunError::Config(_) | RunError::Validation { .. } => 1,
            RunError::Corpus(CorpusError::Io { .. }) | RunError::Tokenizer(TokenizerError::Io { .. }) => 2,
            RunError::Corpus(_) | RunError::Tokenizer(_) => 1,
            _ => 2,
        }
    }
}
