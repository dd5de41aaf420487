//! BEIR-format dataset ingestion: `corpus.jsonl`, `queries.jsonl` and
//! `qrels/*.tsv`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}: missing header, expected `query-id<TAB>corpus-id<TAB>score`")]
    MissingHeader { path: PathBuf },
    #[error("{path}:{line}: duplicate judgment ({query_id}, {doc_id})")]
    DuplicateJudgment {
        path: PathBuf,
        line: usize,
        query_id: String,
        doc_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    /// Text fed to the tokenizer when embedding the document.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub relevance: u32,
}

#[derive(Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct QueryLine {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Iterates non-blank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line_no, line) in lines(path)? {
        let rec: CorpusLine =
            serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(malformed(path, line_no, "empty `_id`"));
        }
        if rec.text.trim().is_empty() && rec.title.trim().is_empty() {
            return Err(malformed(path, line_no, "both `title` and `text` are blank"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: rec.id,
            });
        }
        docs.push(Document {
            id: rec.id,
            title: rec.title,
            text: rec.text,
        });
    }
    Ok(docs)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (line_no, line) in lines(path)? {
        let rec: QueryLine =
            serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(malformed(path, line_no, "empty `_id`"));
        }
        if rec.text.trim().is_empty() {
            return Err(malformed(path, line_no, "blank `text`"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: rec.id,
            });
        }
        queries.push(Query {
            id: rec.id,
            text: rec.text,
        });
    }
    Ok(queries)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Vec<Judgment>, CorpusError> {
    let path = path.as_ref();
    let rows = lines(path)?;
    let mut rows = rows.into_iter();
    match rows.next() {
        Some((_, header)) if header.trim_end_matches('\r') == QRELS_HEADER => {}
        _ => {
            return Err(CorpusError::MissingHeader {
                path: path.to_path_buf(),
            })
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, row) in rows {
        let row = row.trim_end_matches('\r');
        let fields: Vec<&str> = row.split('\t').collect();
        let [qid, did, score] = fields[..] else {
            return Err(malformed(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let relevance: u32 = score
            .trim()
            .parse()
            .map_err(|_| malformed(path, line_no, format!("score `{score}` is not a non-negative integer")))?;
        if qid.is_empty() || did.is_empty() {
            return Err(malformed(path, line_no, "empty id"));
        }
        if !seen.insert((qid.to_string(), did.to_string())) {
            return Err(CorpusError::DuplicateJudgment {
                path: path.to_path_buf(),
                line: line_no,
                query_id: qid.to_string(),
                doc_id: did.to_string(),
            });
        }
        out.push(Judgment {
            query_id: qid.to_string(),
            doc_id: did.to_string(),
            relevance,
        });
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for d in docs {
        let line = serde_json::json!({"_id": d.id, "title": d.title, "text": d.text});
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[Query]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for q in queries {
        let line = serde_json::json!({"_id": q.id, "text": q.text});
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &[Judgment]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "{QRELS_HEADER}")?;
    for j in qrels {
        writeln!(w, "{}\t{}\t{}", j.query_id, j.doc_id, j.relevance)?;
    }
    w.flush()
}

/// Judgments grouped by query, then by document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    by_query: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn from_judgments(judgments: &[Judgment]) -> Self {
        let mut by_query: BTreeMap<String, HashMap<String, u32>> = BTreeMap::new();
        for j in judgments {
            by_query
                .entry(j.query_id.clone())
                .or_default()
                .insert(j.doc_id.clone(), j.relevance);
        }
        Self { by_query }
    }

    pub fn get(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Number of documents with relevance > 0 for `query_id`.
    pub fn num_relevant(&self, query_id: &str) -> usize {
        self.get(query_id)
            .map_or(0, |m| m.values().filter(|&&r| r > 0).count())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub num_documents: usize,
    pub num_queries: usize,
    pub num_judgments: usize,
    pub dangling_qrels: Vec<Judgment>,
    pub duplicate_ids: Vec<String>,
    pub zero_positive_queries: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.dangling_qrels.is_empty() && self.duplicate_ids.is_empty()
    }
}

/// Cross-checks the three collections. Never fails; every finding is a
/// report entry.
pub fn validate_dataset(
    corpus: &[Document],
    queries: &[Query],
    qrels: &[Judgment],
) -> ValidationReport {
    let mut duplicate_ids = BTreeSet::new();
    let mut doc_ids = HashSet::new();
    for d in corpus {
        if !doc_ids.insert(d.id.as_str()) {
            duplicate_ids.insert(d.id.clone());
        }
    }
    let mut query_ids = HashSet::new();
    for q in queries {
        if !query_ids.insert(q.id.as_str()) {
            duplicate_ids.insert(q.id.clone());
        }
    }

    let dangling_qrels = qrels
        .iter()
        .filter(|j| !query_ids.contains(j.query_id.as_str()) || !doc_ids.contains(j.doc_id.as_str()))
        .cloned()
        .collect();

    let mut positives: HashMap<&str, usize> = HashMap::new();
    for j in qrels {
        *positives.entry(j.query_id.as_str()).or_default() += usize::from(j.relevance > 0);
    }
    let mut zero_positive_queries: Vec<String> = positives
        .into_iter()
        .filter(|&(qid, n)| n == 0 && query_ids.contains(qid))
        .map(|(qid, _)| qid.to_string())
        .collect();
    zero_positive_queries.sort();

    ValidationReport {
        num_documents: corpus.len(),
        num_queries: queries.len(),
        num_judgments: qrels.len(),
        dangling_qrels,
        duplicate_ids: duplicate_ids.into_iter().collect(),
        zero_positive_queries,
    }
}
