use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::{DatasetEntry, ExperimentConfig};
use super::RunError;
use crate::corpus::{self, Document, Qrels, Query, ValidationReport};
use crate::embed::{read_store, EmbeddingStore, EmbeddingVector, ProviderConfig, ReferenceEmbedder, ServiceClient};
use crate::metrics::{evaluate_run, MetricParams, MetricReport};
use crate::perturb::{perturb_query_set, PerturbationParams, TokenSpace};
use crate::retrieval::{FlatIndex, RankedList};
use crate::tokenizer::{encode, TokenSequence, Vocabulary};

/// Clean queries, or queries perturbed at a given rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Clean,
    Perturbed(f64),
}

impl Condition {
    /// Row label in the style `BERT-perturbed-5%`, without the model prefix.
    pub fn label(&self) -> String {
        match self {
            Condition::Clean => "clean".to_string(),
            Condition::Perturbed(rate) => format!("perturbed-{}%", percent(*rate)),
        }
    }
}

pub(crate) fn percent(rate: f64) -> String {
    let p = (rate * 100.0 * 1e6).round() / 1e6;
    format!("{p}")
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Perturbed(rate) => write!(f, "perturbed@{rate}"),
        }
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "clean" {
            return Ok(Condition::Clean);
        }
        s.strip_prefix("perturbed@")
            .and_then(|r| r.parse().ok())
            .map(Condition::Perturbed)
            .ok_or_else(|| format!("bad condition `{s}`"))
    }
}

impl Serialize for Condition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    pub report: MetricReport,
    /// Fraction of query token positions whose id changed.
    pub change_rate: f64,
    #[serde(skip)]
    pub run: Vec<RankedList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub name: String,
    pub validation: ValidationReport,
    pub conditions: Vec<ConditionResult>,
    /// Set when the provider failed and the dataset was abandoned.
    #[serde(default)]
    pub error: Option<String>,
}

impl DatasetResult {
    pub fn condition(&self, c: Condition) -> Option<&ConditionResult> {
        self.conditions.iter().find(|r| r.condition == c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
    pub provider: String,
    pub started_at: u64,
    pub finished_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rates: Vec<f64>,
    pub datasets: Vec<DatasetResult>,
    pub provenance: Provenance,
}

impl ExperimentResult {
    pub fn conditions(&self) -> Vec<Condition> {
        std::iter::once(Condition::Clean)
            .chain(self.rates.iter().map(|&r| Condition::Perturbed(r)))
            .collect()
    }
}

/// A dataset loaded and validated in memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub vocab: Option<Vocabulary>,
    pub validation: ValidationReport,
}

impl LoadedDataset {
    pub fn load(entry: &DatasetEntry) -> Result<Self, RunError> {
        let corpus = corpus::load_corpus(&entry.corpus)?;
        let queries = corpus::load_queries(&entry.queries)?;
        let judgments = corpus::load_qrels(&entry.qrels)?;
        let vocab = entry.vocab.as_ref().map(Vocabulary::load).transpose()?;
        let validation = corpus::validate_dataset(&corpus, &queries, &judgments);
        Ok(Self {
            name: entry.name.clone(),
            qrels: Qrels::from_judgments(&judgments),
            corpus,
            queries,
            vocab,
            validation,
        })
    }

    pub fn from_parts(
        name: &str,
        corpus: Vec<Document>,
        queries: Vec<Query>,
        judgments: &[corpus::Judgment],
        vocab: Option<Vocabulary>,
    ) -> Self {
        Self {
            name: name.to_string(),
            validation: corpus::validate_dataset(&corpus, &queries, judgments),
            qrels: Qrels::from_judgments(judgments),
            corpus,
            queries,
            vocab,
        }
    }

    pub fn ensure_valid(&self) -> Result<(), RunError> {
        if self.validation.is_valid() {
            Ok(())
        } else {
            Err(RunError::Validation {
                dataset: self.name.clone(),
                dangling: self.validation.dangling_qrels.len(),
                duplicates: self.validation.duplicate_ids.len(),
            })
        }
    }
}

/// Tokenization plus embedding, resolved from a provider config for one
/// dataset.
pub enum Backend {
    Reference {
        vocab: Vocabulary,
        embedder: ReferenceEmbedder,
        max_len: usize,
    },
    Service {
        client: ServiceClient,
        space: TokenSpace,
    },
}

impl Backend {
    pub fn reference(vocab: Vocabulary, dim: usize, seed: u64, max_len: usize) -> Self {
        let embedder = ReferenceEmbedder {
            dim,
            seed,
            pad_id: vocab.pad_id(),
        };
        Backend::Reference { vocab, embedder, max_len }
    }

    pub fn encode(&self, texts: &[String]) -> Result<Vec<TokenSequence>, RunError> {
        match self {
            Backend::Reference { vocab, max_len, .. } => texts
                .iter()
                .map(|t| encode(t, vocab, *max_len).map_err(RunError::from))
                .collect(),
            Backend::Service { client, .. } => Ok(client.tokenize(texts)?),
        }
    }

    pub fn token_space(&self) -> TokenSpace {
        match self {
            Backend::Reference { vocab, .. } => TokenSpace::from_vocab(vocab),
            Backend::Service { space, .. } => space.clone(),
        }
    }

    /// Embeds `seqs`; with `masks`, pooling covers only positions that are
    /// not padding in the corresponding mask sequence.
    pub fn embed(&self, seqs: &[TokenSequence], masks: Option<&[TokenSequence]>) -> Result<Vec<EmbeddingVector>, RunError> {
        match self {
            Backend::Reference { embedder, .. } => seqs
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    match masks {
                        Some(m) => embedder.embed_masked(s, &m[i]),
                        None => embedder.embed(s),
                    }
                    .map_err(RunError::from)
                })
                .collect(),
            Backend::Service { client, .. } => Ok(client.fetch_embeddings(seqs)?),
        }
    }

    pub fn embed_corpus(&self, corpus: &[Document]) -> Result<EmbeddingStore, RunError> {
        let texts: Vec<String> = corpus.iter().map(Document::full_text).collect();
        let seqs = self.encode(&texts)?;
        let vectors = self.embed(&seqs, None)?;
        let dim = vectors.first().map_or(1, EmbeddingVector::dim);
        let mut store = EmbeddingStore::new(dim, true)?;
        for (doc, v) in corpus.iter().zip(vectors) {
            store.insert(doc.id.clone(), v)?;
        }
        Ok(store)
    }
}

/// Resolves the backend and the corpus store for a dataset.
pub fn prepare(
    dataset: &LoadedDataset,
    config: &ExperimentConfig,
) -> Result<(Backend, EmbeddingStore), RunError> {
    let need_vocab = || {
        dataset
            .vocab
            .clone()
            .ok_or_else(|| RunError::Provider(format!("dataset `{}` has no vocabulary", dataset.name)))
    };
    match &config.provider {
        ProviderConfig::Reference { dim, seed } => {
            let backend = Backend::reference(need_vocab()?, *dim, *seed, config.max_len);
            let store = backend.embed_corpus(&dataset.corpus)?;
            Ok((backend, store))
        }
        ProviderConfig::File { dir, seed } => {
            let store = read_store(dir.join(format!("{}.dre", dataset.name)))?;
            let backend = Backend::reference(need_vocab()?, store.dim(), *seed, config.max_len);
            Ok((backend, store))
        }
        ProviderConfig::Service {
            endpoint,
            model,
            vocab_size,
            special_ids,
            batch_size,
            store_dir,
        } => {
            let backend = Backend::Service {
                client: ServiceClient::new(endpoint, model, *batch_size)?,
                space: TokenSpace {
                    vocab_size: *vocab_size,
                    special_ids: special_ids.clone(),
                },
            };
            let store = match store_dir {
                Some(dir) => read_store(dir.join(format!("{}.dre", dataset.name)))?,
                None => backend.embed_corpus(&dataset.corpus)?,
            };
            Ok((backend, store))
        }
    }
}

/// Settings shared by every condition of one dataset run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub rates: Vec<f64>,
    pub master_seed: u64,
    pub include_special: bool,
    pub depth: usize,
    pub params: MetricParams,
}

/// Evaluates clean queries, then each perturbation rate, against one
/// shared index.
pub fn run_dataset(
    dataset: &LoadedDataset,
    backend: &Backend,
    store: &EmbeddingStore,
    settings: &RunSettings,
) -> Result<Vec<ConditionResult>, RunError> {
    let index = FlatIndex::build(store)?;
    let texts: Vec<String> = dataset.queries.iter().map(|q| q.text.clone()).collect();
    let clean = backend.encode(&texts)?;
    let ids: Vec<String> = dataset.queries.iter().map(|q| q.id.clone()).collect();

    let search = |vectors: Vec<EmbeddingVector>| -> Result<Vec<RankedList>, RunError> {
        let batch: Vec<(String, EmbeddingVector)> = ids.iter().cloned().zip(vectors).collect();
        Ok(index.batch_search(&batch, settings.depth)?)
    };

    let mut results = Vec::with_capacity(1 + settings.rates.len());
    let run = search(backend.embed(&clean, None)?)?;
    results.push(ConditionResult {
        condition: Condition::Clean,
        report: evaluate_run(&run, &dataset.qrels, &settings.params)?,
        change_rate: 0.0,
        run,
    });

    let space = backend.token_space();
    let tagged: Vec<(String, TokenSequence)> = ids.iter().cloned().zip(clean.iter().cloned()).collect();
    for &rate in &settings.rates {
        let params = PerturbationParams::new(rate, settings.master_seed)
            .map_err(|e| RunError::Provider(e.to_string()))?
            .with_include_special(settings.include_special);
        let records = perturb_query_set(&tagged, &space, &params);
        let positions: usize = records.iter().map(|r| r.before.len()).sum();
        let changed: usize = records.iter().map(|r| r.positions_changed.len()).sum();
        let perturbed: Vec<TokenSequence> = records.into_iter().map(|r| r.after).collect();
        let run = search(backend.embed(&perturbed, Some(&clean))?)?;
        results.push(ConditionResult {
            condition: Condition::Perturbed(rate),
            report: evaluate_run(&run, &dataset.qrels, &settings.params)?,
            change_rate: if positions == 0 { 0.0 } else { changed as f64 / positions as f64 },
            run,
        });
    }
    Ok(results)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Loads and validates every dataset, then runs all conditions.
///
/// Validation failures abort the whole experiment. Provider failures abandon
/// only the affected dataset and are recorded in its result.
pub fn run_experiment(config: &ExperimentConfig, rates: &[f64]) -> Result<ExperimentResult, RunError> {
    let started_at = unix_now();
    let params = config.metric_params()?;
    let datasets: Vec<LoadedDataset> = config
        .datasets
        .par_iter()
        .map(LoadedDataset::load)
        .collect::<Result<_, _>>()?;
    for d in &datasets {
        d.ensure_valid()?;
    }
    let settings = RunSettings {
        rates: rates.to_vec(),
        master_seed: config.master_seed,
        include_special: config.include_special,
        depth: config.retrieval_depth(),
        params,
    };
    let results = datasets
        .iter()
        .map(|d| {
            let outcome = prepare(d, config).and_then(|(backend, store)| run_dataset(d, &backend, &store, &settings));
            match outcome {
                Ok(conditions) => Ok(DatasetResult {
                    name: d.name.clone(),
                    validation: d.validation.clone(),
                    conditions,
                    error: None,
                }),
                Err(e) if e.is_provider_failure() => Ok(DatasetResult {
                    name: d.name.clone(),
                    validation: d.validation.clone(),
                    conditions: Vec::new(),
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok(ExperimentResult {
        rates: rates.to_vec(),
        datasets: results,
        provenance: Provenance {
            master_seed: config.master_seed,
            config_hash: config.fingerprint(),
            provider: config.provider.kind().to_string(),
            started_at,
            finished_at: unix_now(),
        },
    })
}

/// Embeds a dataset's corpus with the configured provider.
pub fn embed_corpus(entry: &DatasetEntry, config: &ExperimentConfig) -> Result<EmbeddingStore, RunError> {
    let dataset = LoadedDataset::load(entry)?;
    dataset.ensure_valid()?;
    Ok(prepare(&dataset, config)?.1)
}

/// Per-condition evaluation lookup keyed by condition label.
pub fn reports_by_condition(result: &DatasetResult) -> IndexMap<String, &MetricReport> {
    result
        .conditions
        .iter()
        .map(|c| (c.condition.label(), &c.report))
        .collect()
}
