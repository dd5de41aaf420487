use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::ProviderConfig;
use crate::metrics::MetricParams;
use crate::perturb::DEFAULT_RATE;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("config lists no datasets")]
    NoDatasets,
    #[error("dataset name `{0}` is used twice")]
    DuplicateName(String),
    #[error("path {0} is used by more than one dataset input")]
    DuplicatePath(PathBuf),
    #[error("perturbation rate {0} is outside [0, 1]")]
    BadRate(f64),
    #[error("invalid k list: {0}")]
    BadK(String),
    #[error("max_len must be at least 2, got {0}")]
    BadMaxLen(usize),
    #[error("dataset `{0}` needs a `vocab` file for the {1} provider")]
    MissingVocab(String, &'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    /// WordPiece vocabulary; required unless the service provider tokenizes.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default = "default_k_list")]
    pub k_list: Vec<usize>,
    #[serde(default = "default_rates")]
    pub perturb_rates: Vec<f64>,
    #[serde(default = "default_rate")]
    pub default_rate: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_include_special")]
    pub include_special: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_k_list() -> Vec<usize> {
    vec![1, 10, 100]
}

fn default_rates() -> Vec<f64> {
    vec![0.05, 0.20]
}

fn default_rate() -> f64 {
    DEFAULT_RATE
}

fn default_max_len() -> usize {
    64
}

fn default_include_special() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// A config with defaults for everything but the datasets.
    pub fn new(datasets: Vec<DatasetEntry>) -> Self {
        Self {
            datasets,
            provider: ProviderConfig::default(),
            k_list: default_k_list(),
            perturb_rates: default_rates(),
            default_rate: default_rate(),
            master_seed: 0,
            max_len: default_max_len(),
            include_special: default_include_special(),
            output_dir: default_output_dir(),
        }
    }

    /// Reads a JSON config; relative paths resolve against the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.corpus);
            fix(&mut d.queries);
            fix(&mut d.qrels);
            if let Some(v) = &mut d.vocab {
                fix(v);
            }
        }
        fix(&mut self.output_dir);
        match &mut self.provider {
            ProviderConfig::File { dir, .. } => fix(dir),
            ProviderConfig::Service {
                store_dir: Some(dir),
                ..
            } => fix(dir),
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.datasets.is_empty() {
            return Err(ConfigError::NoDatasets);
        }
        let mut names = HashSet::new();
        let mut paths = HashSet::new();
        for d in &self.datasets {
            if !names.insert(&d.name) {
                return Err(ConfigError::DuplicateName(d.name.clone()));
            }
            for p in [&d.corpus, &d.queries, &d.qrels] {
                if !paths.insert(p) {
                    return Err(ConfigError::DuplicatePath(p.clone()));
                }
            }
            if d.vocab.is_none() && !matches!(self.provider, ProviderConfig::Service { .. }) {
                return Err(ConfigError::MissingVocab(d.name.clone(), self.provider.kind()));
            }
        }
        for &r in self.perturb_rates.iter().chain([&self.default_rate]) {
            if !(0.0..=1.0).contains(&r) {
                return Err(ConfigError::BadRate(r));
            }
        }
        self.metric_params()?;
        if self.max_len < 2 {
            return Err(ConfigError::BadMaxLen(self.max_len));
        }
        Ok(())
    }

    pub fn metric_params(&self) -> Result<MetricParams, ConfigError> {
        MetricParams::all_metrics(self.k_list.clone()).map_err(|e| ConfigError::BadK(e.to_string()))
    }

    /// Retrieval depth: deep enough for every cutoff and for MAP@100.
    pub fn retrieval_depth(&self) -> usize {
        self.k_list.iter().copied().max().unwrap_or(1).max(100)
    }

    /// Hex SHA-256 of the config's canonical JSON. The output directory is
    /// left out: where results land does not change them.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
