use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use densebench::embed::{write_store, ProviderConfig, DEFAULT_DIM};
use densebench::perturb::{
    expected_change_rate, format_perturbation_table, perturb_query_set, render_perturbation_table, PerturbationParams,
    TokenSpace,
};
use densebench::runner::synthetic::{generate, SyntheticSpec};
use densebench::runner::{
    embed_corpus, emit_report, read_result, run_experiment, ExperimentConfig, ExperimentResult, LoadedDataset, RunError,
};
use densebench::tokenizer::{encode, tokenize, TokenSequence, Vocabulary};

#[derive(Parser)]
#[command(name = "densebench", version, about = "Dense-retrieval robustness under token-id perturbation")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for perturbation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Perturbation rate for `run` and `show-perturbation`.
    #[arg(long, global = true)]
    perturb_rate: Option<f64>,
    /// Metric cutoffs, e.g. `1,10,100`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Embedding provider, overriding the config.
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Reference,
    File,
    Service,
}

#[derive(Subcommand)]
enum Command {
    /// Check every dataset for dangling judgments and duplicate ids.
    Validate,
    /// Embed each corpus and write `<out>/<dataset>.dre`.
    EmbedCorpus,
    /// Evaluate clean queries and one perturbation rate.
    Run,
    /// Evaluate clean queries and every configured perturbation rate.
    Sweep,
    /// Print queries before and after perturbation.
    ShowPerturbation {
        /// Dataset to draw queries from; defaults to the first.
        #[arg(long)]
        dataset: Option<String>,
        /// Vocabulary file; with it, TEXT arguments are perturbed instead of
        /// dataset queries and no config is needed.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Number of dataset queries to show.
        #[arg(long, default_value_t = 10)]
        limit: usize,
        /// Sequence length; defaults to the config's, or to the longest
        /// TEXT argument when using `--vocab`.
        #[arg(long)]
        max_len: Option<usize>,
        text: Vec<String>,
    },
    /// Rebuild report tables from a saved `result.json`.
    Report {
        /// Directory holding `result.json`; defaults to `--out`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Write a synthetic self-retrieval dataset with a matching config.
    Synthesize {
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Number of datasets, named `synth0`, `synth1`, ...
        #[arg(long, default_value_t = 1)]
        datasets: usize,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Reported already; carries only the exit code.
    #[error("")]
    Silent(u8),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) => e.exit_code() as u8,
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Silent(code) => *code,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Cli {
    fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("this command needs --config".into()))?;
        let mut cfg = ExperimentConfig::load(path).map_err(RunError::from)?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(k) = &self.k {
            cfg.k_list = k.clone();
        }
        if let Some(rate) = self.perturb_rate {
            cfg.default_rate = rate;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(kind) = self.provider {
            cfg.provider = override_provider(&cfg, kind)?;
        }
        cfg.validate().map_err(RunError::from)?;
        Ok(cfg)
    }
}

fn override_provider(cfg: &ExperimentConfig, kind: ProviderKind) -> Result<ProviderConfig, CliError> {
    let current = &cfg.provider;
    let seed = match current {
        ProviderConfig::Reference { seed, .. } | ProviderConfig::File { seed, .. } => *seed,
        ProviderConfig::Service { .. } => 0,
    };
    Ok(match (kind, current) {
        (ProviderKind::Reference, ProviderConfig::Reference { .. })
        | (ProviderKind::File, ProviderConfig::File { .. })
        | (ProviderKind::Service, ProviderConfig::Service { .. }) => current.clone(),
        (ProviderKind::Reference, _) => ProviderConfig::Reference { dim: DEFAULT_DIM, seed },
        // Stores written by `embed-corpus` land in the output directory.
        (ProviderKind::File, _) => ProviderConfig::File {
            dir: cfg.output_dir.clone(),
            seed,
        },
        (ProviderKind::Service, _) => {
            return Err(CliError::Usage(
                "--provider service needs endpoint, model and vocab_size in the config's provider section".into(),
            ))
        }
    })
}

fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut failed = false;
    for entry in &cfg.datasets {
        let d = LoadedDataset::load(entry)?;
        let v = &d.validation;
        let status = if v.is_valid() { "ok" } else { "INVALID" };
        println!(
            "{}: {status} ({} documents, {} queries, {} judgments, {} dangling, {} duplicate ids, {} queries without positives)",
            d.name,
            v.num_documents,
            v.num_queries,
            v.num_judgments,
            v.dangling_qrels.len(),
            v.duplicate_ids.len(),
            v.zero_positive_queries.len()
        );
        for j in v.dangling_qrels.iter().take(5) {
            println!("  dangling: {}\t{}\t{}", j.query_id, j.doc_id, j.relevance);
        }
        for id in v.duplicate_ids.iter().take(5) {
            println!("  duplicate id: {id}");
        }
        failed |= !v.is_valid();
    }
    if failed {
        Err(CliError::Silent(1))
    } else {
        Ok(())
    }
}

fn embed_all(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    for entry in &cfg.datasets {
        let store = embed_corpus(entry, cfg)?;
        let path = cfg.output_dir.join(format!("{}.dre", entry.name));
        write_store(&store, &path).map_err(RunError::from)?;
        println!("{}: {} vectors of dim {} -> {}", entry.name, store.len(), store.dim(), path.display());
    }
    Ok(())
}

fn print_report(out: &Path, result: &ExperimentResult) -> Result<(), CliError> {
    emit_report(result, out).map_err(RunError::from)?;
    for name in ["average.txt", "drop.txt"] {
        let path = out.join(name);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        println!("{text}");
    }
    let mut failed = false;
    for d in &result.datasets {
        if let Some(err) = &d.error {
            eprintln!("error: dataset `{}`: {err}", d.name);
            failed = true;
        }
    }
    if failed {
        Err(CliError::Silent(2))
    } else {
        Ok(())
    }
}

fn experiment(cfg: &ExperimentConfig, rates: &[f64]) -> Result<(), CliError> {
    let result = run_experiment(cfg, rates)?;
    print_report(&cfg.output_dir, &result)
}

fn show_perturbation(
    cli: &Cli,
    dataset: Option<&str>,
    vocab_path: Option<&Path>,
    limit: usize,
    max_len: Option<usize>,
    texts: &[String],
) -> Result<(), CliError> {
    let (vocab, queries, seed, rate, include_special, max_len) = match vocab_path {
        Some(path) => {
            let vocab = Vocabulary::load(path).map_err(RunError::from)?;
            let queries: Vec<(String, String)> =
                texts.iter().enumerate().map(|(i, t)| (format!("text{i}"), t.clone())).collect();
            let rate = cli.perturb_rate.unwrap_or(densebench::perturb::DEFAULT_RATE);
            let longest = texts.iter().map(|t| tokenize(t, &vocab).len() + 2).max().unwrap_or(2);
            let max_len = max_len.unwrap_or(longest);
            (vocab, queries, cli.seed.unwrap_or(0), rate, true, max_len)
        }
        None => {
            let cfg = cli.load_config()?;
            let entry = match dataset {
                Some(name) => cfg
                    .datasets
                    .iter()
                    .find(|d| d.name == name)
                    .ok_or_else(|| CliError::Usage(format!("no dataset named `{name}`")))?,
                None => &cfg.datasets[0],
            };
            let d = LoadedDataset::load(entry)?;
            let vocab = d
                .vocab
                .ok_or_else(|| CliError::Usage(format!("dataset `{}` has no vocab file", d.name)))?;
            let queries = if texts.is_empty() {
                d.queries.iter().take(limit).map(|q| (q.id.clone(), q.text.clone())).collect()
            } else {
                texts.iter().enumerate().map(|(i, t)| (format!("text{i}"), t.clone())).collect()
            };
            let max_len = max_len.unwrap_or(cfg.max_len);
            (vocab, queries, cfg.master_seed, cfg.default_rate, cfg.include_special, max_len)
        }
    };
    if queries.is_empty() {
        return Err(CliError::Usage("nothing to perturb: pass TEXT arguments or a config with queries".into()));
    }
    let params = PerturbationParams::new(rate, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .with_include_special(include_special);
    let seqs: Vec<(String, TokenSequence)> = queries
        .iter()
        .map(|(id, t)| Ok((id.clone(), encode(t, &vocab, max_len)?)))
        .collect::<Result<_, densebench::tokenizer::TokenizerError>>()
        .map_err(RunError::from)?;
    let records = perturb_query_set(&seqs, &TokenSpace::from_vocab(&vocab), &params);
    let rows = render_perturbation_table(&records, &vocab).map_err(RunError::from)?;
    print!("{}", format_perturbation_table(&rows));
    let positions: usize = records.iter().map(|r| r.before.len()).sum();
    let changed: usize = records.iter().map(|r| r.positions_changed.len()).sum();
    println!(
        "\nrate {rate}, seed {seed}: {changed}/{positions} positions changed (expected fraction {:.4})",
        expected_change_rate(rate)
    );
    Ok(())
}

fn synthesize(cli: &Cli, docs: usize, queries: usize, datasets: usize) -> Result<(), CliError> {
    if queries > docs || docs == 0 || datasets == 0 {
        return Err(CliError::Usage("need 0 < queries <= docs and at least one dataset".into()));
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let seed = cli.seed.unwrap_or(0);
    let mut entries = Vec::new();
    for i in 0..datasets {
        let name = format!("synth{i}");
        let dir = out.join(&name);
        let spec = SyntheticSpec {
            num_docs: docs,
            num_queries: queries,
            seed: seed.wrapping_add(i as u64),
            ..SyntheticSpec::default()
        };
        generate(spec).write_to(&dir).map_err(io_err(&dir))?;
        entries.push(densebench::runner::DatasetEntry {
            corpus: format!("{name}/corpus.jsonl").into(),
            queries: format!("{name}/queries.jsonl").into(),
            qrels: format!("{name}/qrels.tsv").into(),
            vocab: Some(format!("{name}/vocab.txt").into()),
            name,
        });
    }
    let mut cfg = ExperimentConfig::new(entries);
    cfg.master_seed = seed;
    cfg.max_len = 16;
    if let Some(k) = &cli.k {
        cfg.k_list = k.clone();
    }
    let path = out.join("config.json");
    let mut text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    println!("wrote {datasets} dataset(s) and {}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate => validate(&cli.load_config()?),
        Command::EmbedCorpus => embed_all(&cli.load_config()?),
        Command::Run => {
            let cfg = cli.load_config()?;
            experiment(&cfg, &[cfg.default_rate])
        }
        Command::Sweep => {
            let cfg = cli.load_config()?;
            experiment(&cfg, &cfg.perturb_rates.clone())
        }
        Command::ShowPerturbation {
            dataset,
            vocab,
            limit,
            max_len,
            text,
        } => show_perturbation(cli, dataset.as_deref(), vocab.as_deref(), *limit, *max_len, text),
        Command::Report { from } => {
            let out = match (&cli.out, from) {
                (Some(out), _) => out.clone(),
                (None, Some(from)) => from.clone(),
                (None, None) => cli.load_config()?.output_dir,
            };
            let from = from.clone().unwrap_or_else(|| out.clone());
            let result = read_result(&from.join("result.json")).map_err(RunError::from)?;
            print_report(&out, &result)
        }
        Command::Synthesize {
            docs,
            queries,
            datasets,
        } => synthesize(cli, *docs, *queries, *datasets),
    }
}

fn main() -> ExitCode {
    // Exit quietly when stdout is closed early, e.g. piped into `head`.
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        let broken_pipe = info
            .payload()
            .downcast_ref::<String>()
            .is_some_and(|m| m.contains("Broken pipe"));
        if broken_pipe {
            std::process::exit(0);
        }
        default_hook(info);
    }));
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments are invalid input; 2 is reserved for provider and IO failures.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::Silent(_)) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
