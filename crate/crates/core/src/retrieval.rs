//! Exact top-k cosine search over a flat index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingStore, EmbeddingVector};

/// Document count above which a single query's scan is split across threads.
const PARALLEL_SCAN_MIN_DOCS: usize = 16_384;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero-norm vector{}", .0.as_deref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    ZeroNorm(Option<String>),
    #[error("non-finite component in vector{}", .0.as_deref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    NonFinite(Option<String>),
    #[error("cannot build an index from an empty store")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[inline]
fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// `u·v / (‖u‖‖v‖)` accumulated in `f64`.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (nu, nv) = (norm(u.as_slice()), norm(v.as_slice()));
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroNorm(None));
    }
    Ok(dot(u.as_slice(), v.as_slice()) / (nu * nv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// Row-major matrix of document vectors sorted by doc id. Row norms are
/// computed once at build so each score is a single dot product and divide.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    doc_ids: Vec<String>,
    rows: Vec<f32>,
    norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    row: usize,
}

impl Candidate {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.row.cmp(&other.row))
    }
}

// Heap order: the worst-ranked candidate sits on top.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl FlatIndex {
    pub fn build(store: &EmbeddingStore) -> Result<Self, RetrievalError> {
        if store.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let mut records: Vec<(&str, &EmbeddingVector)> = store.iter().collect();
        records.sort_by(|a, b| a.0.cmp(b.0));
        let dim = store.dim();
        let mut rows = Vec::with_capacity(records.len() * dim);
        let mut norms = Vec::with_capacity(records.len());
        let mut doc_ids = Vec::with_capacity(records.len());
        for (id, v) in records {
            if !v.is_finite() {
                return Err(RetrievalError::NonFinite(Some(id.to_string())));
            }
            let n = norm(v.as_slice());
            if n == 0.0 {
                return Err(RetrievalError::ZeroNorm(Some(id.to_string())));
            }
            rows.extend_from_slice(v.as_slice());
            norms.push(n);
            doc_ids.push(id.to_string());
        }
        Ok(Self {
            dim,
            doc_ids,
            rows,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn top_k_range(&self, query: &[f32], query_norm: f64, rows: std::ops::Range<usize>, k: usize) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for row in rows {
            let c = Candidate {
                score: dot(query, self.row(row)) / (query_norm * self.norms[row]),
                row,
            };
            if heap.len() < k {
                heap.push(c);
            } else if let Some(worst) = heap.peek() {
                if c.rank_cmp(worst) == Ordering::Less {
                    heap.pop();
                    heap.push(c);
                }
            }
        }
        heap
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<f64, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch {
                left: query.dim(),
                right: self.dim,
            });
        }
        if !query.is_finite() {
            return Err(RetrievalError::NonFinite(None));
        }
        let n = norm(query.as_slice());
        if n == 0.0 {
            return Err(RetrievalError::ZeroNorm(None));
        }
        Ok(n)
    }

    fn finish(&self, query_id: &str, mut best: Vec<Candidate>) -> RankedList {
        best.sort_by(Candidate::rank_cmp);
        RankedList {
            query_id: query_id.to_string(),
            entries: best
                .into_iter()
                .enumerate()
                .map(|(i, c)| RankedEntry {
                    doc_id: self.doc_ids[c.row].clone(),
                    score: c.score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    /// The `k` highest-scoring documents, ties broken by smaller doc id.
    pub fn search(&self, query_id: &str, query: &EmbeddingVector, k: usize) -> Result<RankedList, RetrievalError> {
        if self.len() >= PARALLEL_SCAN_MIN_DOCS {
            self.search_partitioned(query_id, query, k, rayon::current_num_threads().max(1))
        } else {
            self.search_partitioned(query_id, query, k, 1)
        }
    }

    /// Splits the scan into `parts` contiguous row ranges and merges their
    /// partial heaps; the result does not depend on `parts`.
    pub fn search_partitioned(
        &self,
        query_id: &str,
        query: &EmbeddingVector,
        k: usize,
        parts: usize,
    ) -> Result<RankedList, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let qn = self.check_query(query)?;
        let k = k.min(self.len());
        let q = query.as_slice();
        let parts = parts.clamp(1, self.len());
        let chunk = self.len().div_ceil(parts);
        let best: Vec<Candidate> = if parts == 1 {
            self.top_k_range(q, qn, 0..self.len(), k).into_vec()
        } else {
            let partial: Vec<Candidate> = (0..parts)
                .into_par_iter()
                .flat_map_iter(|p| {
                    let lo = p * chunk;
                    let hi = ((p + 1) * chunk).min(self.len());
                    self.top_k_range(q, qn, lo..hi.max(lo), k).into_vec()
                })
                .collect();
            let mut merged: Vec<Candidate> = partial;
            merged.sort_by(Candidate::rank_cmp);
            merged.truncate(k);
            merged
        };
        Ok(self.finish(query_id, best))
    }

    pub fn batch_search(
        &self,
        queries: &[(String, EmbeddingVector)],
        k: usize,
    ) -> Result<Vec<RankedList>, RetrievalError> {
        queries
            .par_iter()
            .map(|(qid, q)| self.search(qid, q, k))
            .collect()
    }
}

/// Writes TREC run lines: `qid Q0 docid rank score run_name`.
pub fn write_trec_run<W: Write>(mut w: W, lists: &[RankedList], run_name: &str) -> std::io::Result<()> {
    for list in lists {
        for e in &list.entries {
            writeln!(w, "{} Q0 {} {} {} {}", list.query_id, e.doc_id, e.rank, e.score, run_name)?;
        }
    }
    w.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum RunParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses a TREC run, grouping lines by query in first-seen order and
/// sorting each query's entries by rank.
pub fn read_trec_run<R: BufRead>(r: R) -> Result<Vec<RankedList>, RunParseError> {
    let mut lists: indexmap::IndexMap<String, Vec<RankedEntry>> = indexmap::IndexMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| RunParseError::Malformed {
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _q0, did, rank, score, _name] = fields[..] else {
            return Err(bad("expected 6 whitespace-separated fields"));
        };
        let rank = rank.parse().map_err(|_| bad("rank is not an integer"))?;
        let score = score.parse().map_err(|_| bad("score is not a number"))?;
        lists.entry(qid.to_string()).or_default().push(RankedEntry {
            doc_id: did.to_string(),
            score,
            rank,
        });
    }
    Ok(lists
        .into_iter()
        .map(|(query_id, mut entries)| {
            entries.sort_by_key(|e| e.rank);
            RankedList { query_id, entries }
        })
        .collect())
}
