//! Ranked-retrieval metrics: Accuracy (hit rate), Precision, Recall, NDCG,
//! MRR and MAP at cutoff `k`.
//!
//! `rel_i` is the judged grade of the document at rank `i` (0 when unjudged)
//! and `R` the number of documents judged with grade > 0. NDCG uses graded
//! gains `2^rel - 1`; every other metric binarizes relevance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Qrels;
use crate::retrieval::RankedList;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("query has no relevant documents")]
    NoRelevant,
    #[error("cutoff k must be at least 1")]
    ZeroK,
    #[error("no evaluable queries: {0} ranked lists had no positive judgments")]
    NothingToEvaluate(usize),
    #[error("k list must be non-empty, ascending and distinct: {0:?}")]
    BadKList(Vec<usize>),
    #[error("query `{0}` appears more than once in the run")]
    DuplicateQuery(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    Ndcg,
    Mrr,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::Ndcg,
        Metric::Mrr,
        Metric::Map,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "Acc",
            Metric::Precision => "Prec",
            Metric::Recall => "Rec",
            Metric::Ndcg => "NDCG",
            Metric::Mrr => "MRR",
            Metric::Map => "MAP",
        }
    }

    pub fn at(self, k: usize) -> MetricKey {
        MetricKey { metric: self, k }
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }
}

/// A metric at a cutoff, rendered `NDCG@10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetricKey {
    pub metric: Metric,
    pub k: usize,
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.metric.label(), self.k)
    }
}

impl FromStr for MetricKey {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))?;
        let k: usize = k.parse().map_err(|_| MetricError::UnknownMetric(s.to_string()))?;
        if k == 0 {
            return Err(MetricError::ZeroK);
        }
        Ok(name.parse::<Metric>()?.at(k))
    }
}

impl Serialize for MetricKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// The six headline columns: Acc@1, Prec@1, Rec@1, NDCG@10, MRR@10, MAP@100.
pub fn headline_keys() -> [MetricKey; 6] {
    [
        Metric::Accuracy.at(1),
        Metric::Precision.at(1),
        Metric::Recall.at(1),
        Metric::Ndcg.at(10),
        Metric::Mrr.at(10),
        Metric::Map.at(100),
    ]
}

type Judged = HashMap<String, u32>;

fn grade(judged: &Judged, doc: &str) -> u32 {
    judged.get(doc).copied().unwrap_or(0)
}

fn num_relevant(judged: &Judged) -> usize {
    judged.values().filter(|&&r| r > 0).count()
}

fn hits_in_top_k(ranking: &[&str], judged: &Judged, k: usize) -> usize {
    ranking.iter().take(k).filter(|d| grade(judged, d) > 0).count()
}

pub fn precision_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(hits_in_top_k(ranking, judged, k) as f64 / k as f64)
}

pub fn recall_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let r = num_relevant(judged);
    if r == 0 {
        return Err(MetricError::NoRelevant);
    }
    Ok(hits_in_top_k(ranking, judged, k) as f64 / r as f64)
}

/// 1 when any of the top `k` is relevant.
pub fn accuracy_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(if hits_in_top_k(ranking, judged, k) > 0 { 1.0 } else { 0.0 })
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discounted(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, rel)| gain(rel) / ((i + 2) as f64).log2())
        .sum()
}

pub fn dcg_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(discounted(ranking.iter().take(k).map(|d| grade(judged, d))))
}

/// DCG of the ideal ordering of the judged documents, truncated at `k`.
pub fn idcg_at_k(judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let mut grades: Vec<u32> = judged.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    Ok(discounted(grades.into_iter().take(k)))
}

pub fn ndcg_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    let ideal = idcg_at_k(judged, k)?;
    if ideal == 0.0 {
        return Err(MetricError::NoRelevant);
    }
    Ok(dcg_at_k(ranking, judged, k)? / ideal)
}

/// `1 / rank` of the first relevant document within the top `k`, else 0.
pub fn reciprocal_rank_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(ranking
        .iter()
        .take(k)
        .position(|d| grade(judged, d) > 0)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// `(1 / min(R, k)) · Σ_{i≤k} P@i · rel_i` with binary `rel_i`.
pub fn average_precision_at_k(ranking: &[&str], judged: &Judged, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let r = num_relevant(judged);
    if r == 0 {
        return Err(MetricError::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().take(k).enumerate() {
        if grade(judged, d) > 0 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / r.min(k) as f64)
}

pub fn metric_value(key: MetricKey, ranking: &[&str], judged: &Judged) -> Result<f64, MetricError> {
    let k = key.k;
    match key.metric {
        Metric::Accuracy => accuracy_at_k(ranking, judged, k),
        Metric::Precision => precision_at_k(ranking, judged, k),
        Metric::Recall => recall_at_k(ranking, judged, k),
        Metric::Ndcg => ndcg_at_k(ranking, judged, k),
        Metric::Mrr => reciprocal_rank_at_k(ranking, judged, k),
        Metric::Map => average_precision_at_k(ranking, judged, k),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricParams {
    pub k_list: Vec<usize>,
    pub metrics: Vec<Metric>,
}

impl MetricParams {
    pub fn new(k_list: Vec<usize>, metrics: Vec<Metric>) -> Result<Self, MetricError> {
        let ascending = k_list.windows(2).all(|w| w[0] < w[1]);
        if k_list.is_empty() || !ascending || k_list[0] == 0 {
            return Err(MetricError::BadKList(k_list));
        }
        Ok(Self { k_list, metrics })
    }

    /// All six metrics at every cutoff in `k_list`.
    pub fn all_metrics(k_list: Vec<usize>) -> Result<Self, MetricError> {
        Self::new(k_list, Metric::ALL.to_vec())
    }

    pub fn keys(&self) -> Vec<MetricKey> {
        let mut keys: Vec<MetricKey> = self
            .metrics
            .iter()
            .flat_map(|&m| self.k_list.iter().map(move |&k| m.at(k)))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn max_k(&self) -> usize {
        self.k_list.last().copied().unwrap_or(1)
    }
}

impl Default for MetricParams {
    fn default() -> Self {
        Self::all_metrics(vec![1, 10, 100]).expect("static k list")
    }
}

// Metric (de)serialization by label keeps the params JSON readable.
impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub type MetricValues = BTreeMap<MetricKey, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, MetricValues>,
    pub averaged: MetricValues,
    pub q_evaluated: usize,
    /// Ranked lists skipped because their query has no positive judgment.
    pub q_excluded: usize,
    pub params: MetricParams,
}

/// Scores every ranked list whose query has at least one relevant judgment
/// and averages over those queries.
pub fn evaluate_run(run: &[RankedList], qrels: &Qrels, params: &MetricParams) -> Result<MetricReport, MetricError> {
    let mut seen = HashSet::new();
    for list in run {
        if !seen.insert(list.query_id.as_str()) {
            return Err(MetricError::DuplicateQuery(list.query_id.clone()));
        }
    }
    let keys = params.keys();
    let evaluable: Vec<(&RankedList, &Judged)> = run
        .iter()
        .filter_map(|l| qrels.get(&l.query_id).filter(|j| num_relevant(j) > 0).map(|j| (l, j)))
        .collect();
    let q_excluded = run.len() - evaluable.len();
    if evaluable.is_empty() {
        return Err(MetricError::NothingToEvaluate(q_excluded));
    }
    let per_query: BTreeMap<String, MetricValues> = evaluable
        .par_iter()
        .map(|(list, judged)| {
            let ranking: Vec<&str> = list.doc_ids().collect();
            let values = keys
                .iter()
                .map(|&key| metric_value(key, &ranking, judged).map(|v| (key, v)))
                .collect::<Result<MetricValues, _>>()?;
            Ok((list.query_id.clone(), values))
        })
        .collect::<Result<_, MetricError>>()?;
    let averaged = mean_values(per_query.values(), &keys);
    Ok(MetricReport {
        q_evaluated: per_query.len(),
        per_query,
        averaged,
        q_excluded,
        params: params.clone(),
    })
}

fn mean_values<'a>(rows: impl Iterator<Item = &'a MetricValues> + Clone, keys: &[MetricKey]) -> MetricValues {
    let n = rows.clone().count() as f64;
    keys.iter()
        .map(|key| {
            let sum: f64 = rows.clone().map(|r| r[key]).sum();
            (*key, sum / n)
        })
        .collect()
}
