//! Browser demo for densebench.
//!
//! Three operations, each returning a JSON string: perturb a piece of text,
//! measure retrieval degradation on a synthetic dataset, and score a ranked
//! list of relevance grades. The `*_json` functions hold the logic so they
//! can be tested natively; the `#[wasm_bindgen]` exports wrap them.

use std::collections::HashMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use densebench::metrics::{
    accuracy_at_k, average_precision_at_k, ndcg_at_k, precision_at_k, recall_at_k, reciprocal_rank_at_k, Metric,
    MetricParams,
};
use densebench::perturb::{expected_change_rate, perturb_sequence, query_stream, PerturbationParams, TokenSpace};
use densebench::runner::synthetic::{generate, SyntheticSpec};
use densebench::runner::{run_dataset, Backend, Condition, LoadedDataset, RunSettings};
use densebench::tokenizer::{decode, encode, tokenize, Vocabulary, CLS, PAD, SEP, UNK};

const WORDS: &str = "a about after all also an and any are as at back be because been before but by can come could \
day do even first for from get give go good have he her him his how i if in into is it its just know like look make \
me model most my new no not now of on one only or other our out over people query say search see she so some take \
than that the their them then there these they think this time to token two up us use want way we well what when \
which who will with work would year you your";

const SUFFIXES: [&str; 8] = ["##s", "##es", "##ed", "##ing", "##er", "##ly", "##al", "##ion"];

/// Specials, common English words, suffixes, then single letters, digits and
/// punctuation with their continuation forms so any ASCII text tokenizes.
pub fn demo_vocab() -> Vocabulary {
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    tokens.extend(WORDS.split_whitespace().map(str::to_string));
    tokens.extend(SUFFIXES.iter().map(|s| s.to_string()));
    let singles = ('a'..='z').chain('0'..='9');
    tokens.extend(singles.clone().map(String::from));
    tokens.extend(singles.map(|c| format!("##{c}")));
    tokens.extend((b'!'..=b'~').filter(u8::is_ascii_punctuation).map(|b| (b as char).to_string()));
    let mut seen = std::collections::HashSet::new();
    tokens.retain(|t| seen.insert(t.clone()));
    Vocabulary::from_tokens(tokens).expect("demo vocabulary is well-formed")
}

#[derive(Serialize)]
struct PerturbedText {
    before: String,
    after: String,
    ids_before: Vec<u32>,
    ids_after: Vec<u32>,
    changed_positions: Vec<usize>,
    expected_change_rate: f64,
    vocab_size: usize,
}

pub fn perturb_text_json(text: &str, rate: f64, seed: u64) -> Result<String, String> {
    let vocab = demo_vocab();
    let params = PerturbationParams::new(rate, seed).map_err(|e| e.to_string())?;
    let max_len = tokenize(text, &vocab).len() + 2;
    let seq = encode(text, &vocab, max_len).map_err(|e| e.to_string())?;
    let after = perturb_sequence(&seq, &TokenSpace::from_vocab(&vocab), &params, &mut query_stream(seed, text));
    let changed_positions = seq
        .ids()
        .iter()
        .zip(after.ids())
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect();
    let out = PerturbedText {
        before: decode(seq.ids(), &vocab).map_err(|e| e.to_string())?,
        after: decode(after.ids(), &vocab).map_err(|e| e.to_string())?,
        ids_before: seq.0,
        ids_after: after.0,
        changed_positions,
        expected_change_rate: expected_change_rate(rate),
        vocab_size: vocab.len(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurvePoint {
    rate: f64,
    ndcg_at_10: f64,
    mrr_at_10: f64,
    acc_at_1: f64,
    change_rate: f64,
}

/// Mean clean and perturbed metrics over `seeds` synthetic self-retrieval
/// datasets of `docs` documents and `queries` queries each.
pub fn degradation_curve_json(rates: &[f64], docs: usize, queries: usize, seeds: u64) -> Result<String, String> {
    if docs == 0 || queries == 0 || queries > docs || seeds == 0 {
        return Err("need 0 < queries <= docs and at least one seed".into());
    }
    if docs > 5000 {
        return Err("at most 5000 documents in the browser demo".into());
    }
    let rates: Vec<f64> = rates.iter().copied().filter(|&r| r > 0.0).collect();
    let params = MetricParams::new(vec![1, 10], vec![Metric::Accuracy, Metric::Ndcg, Metric::Mrr]).map_err(|e| e.to_string())?;
    let mut sums = vec![[0.0f64; 4]; rates.len() + 1];
    for seed in 0..seeds {
        let ds = generate(SyntheticSpec {
            num_docs: docs,
            num_queries: queries,
            seed,
            ..SyntheticSpec::default()
        });
        let dataset = LoadedDataset::from_parts("synthetic", ds.corpus, ds.queries, &ds.qrels, None);
        let backend = Backend::reference(ds.vocab, 64, seed, 16);
        let store = backend.embed_corpus(&dataset.corpus).map_err(|e| e.to_string())?;
        let settings = RunSettings {
            rates: rates.clone(),
            master_seed: seed,
            include_special: true,
            depth: 10,
            params: params.clone(),
        };
        let results = run_dataset(&dataset, &backend, &store, &settings).map_err(|e| e.to_string())?;
        for (sum, r) in sums.iter_mut().zip(&results) {
            let v = &r.report.averaged;
            sum[0] += v[&Metric::Ndcg.at(10)];
            sum[1] += v[&Metric::Mrr.at(10)];
            sum[2] += v[&Metric::Accuracy.at(1)];
            sum[3] += r.change_rate;
        }
    }
    let n = seeds as f64;
    let points: Vec<CurvePoint> = std::iter::once(Condition::Clean)
        .chain(rates.iter().map(|&r| Condition::Perturbed(r)))
        .zip(sums)
        .map(|(c, s)| CurvePoint {
            rate: match c {
                Condition::Clean => 0.0,
                Condition::Perturbed(r) => r,
            },
            ndcg_at_10: s[0] / n,
            mrr_at_10: s[1] / n,
            acc_at_1: s[2] / n,
            change_rate: s[3] / n,
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RankingScores {
    k: usize,
    relevant: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    ndcg: f64,
    mrr: f64,
    average_precision: f64,
}

/// Scores a ranking given as relevance grades in rank order. `unretrieved`
/// lists grades of judged documents missing from the ranking.
pub fn score_ranking_json(grades: &[u32], unretrieved: &[u32], k: usize) -> Result<String, String> {
    let mut judged: HashMap<String, u32> = HashMap::new();
    let mut ranking = Vec::new();
    for (i, &g) in grades.iter().enumerate() {
        judged.insert(format!("r{i}"), g);
        ranking.push(format!("r{i}"));
    }
    for (i, &g) in unretrieved.iter().enumerate() {
        judged.insert(format!("u{i}"), g);
    }
    let ranking: Vec<&str> = ranking.iter().map(String::as_str).collect();
    let err = |e: densebench::metrics::MetricError| e.to_string();
    let out = RankingScores {
        k,
        relevant: judged.values().filter(|&&g| g > 0).count(),
        accuracy: accuracy_at_k(&ranking, &judged, k).map_err(err)?,
        precision: precision_at_k(&ranking, &judged, k).map_err(err)?,
        recall: recall_at_k(&ranking, &judged, k).map_err(err)?,
        ndcg: ndcg_at_k(&ranking, &judged, k).map_err(err)?,
        mrr: reciprocal_rank_at_k(&ranking, &judged, k).map_err(err)?,
        average_precision: average_precision_at_k(&ranking, &judged, k).map_err(err)?,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Perturbs `text` at `rate` and returns before/after text and ids as JSON.
#[wasm_bindgen]
pub fn perturb_text(text: &str, rate: f64, seed: u32) -> Result<String, JsError> {
    perturb_text_json(text, rate, u64::from(seed)).map_err(|e| JsError::new(&e))
}

/// Mean NDCG@10, MRR@10 and Acc@1 at rate 0 and each of `rates`.
#[wasm_bindgen]
pub fn degradation_curve(rates: Vec<f64>, docs: usize, queries: usize, seeds: u32) -> Result<String, JsError> {
    degradation_curve_json(&rates, docs, queries, u64::from(seeds)).map_err(|e| JsError::new(&e))
}

/// Metrics at `k` for a ranking given as relevance grades.
#[wasm_bindgen]
pub fn score_ranking(grades: Vec<u32>, unretrieved: Vec<u32>, k: usize) -> Result<String, JsError> {
    score_ranking_json(&grades, &unretrieved, k).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn vocab_covers_ascii_text() {
        let v = demo_vocab();
        let ids = tokenize("Searching 42 tokens, quickly!", &v);
        assert!(!ids.contains(&v.unk_id()));
        assert_eq!(decode(&ids, &v).unwrap(), "search ##ing 42 token ##s , quick ##ly !".replace(" ##", ""));
    }

    #[test]
    fn zero_rate_leaves_text_alone() {
        let out: Value = serde_json::from_str(&perturb_text_json("the model", 0.0, 1).unwrap()).unwrap();
        assert_eq!(out["before"], "[CLS] the model [SEP]");
        assert_eq!(out["after"], out["before"]);
        assert_eq!(out["changed_positions"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn full_rate_changes_most_tokens_deterministically() {
        let text = "we want to search for the good token";
        let a = perturb_text_json(text, 1.0, 3).unwrap();
        assert_eq!(a, perturb_text_json(text, 1.0, 3).unwrap());
        let out: Value = serde_json::from_str(&a).unwrap();
        assert!(out["changed_positions"].as_array().unwrap().len() >= 5);
        assert!(perturb_text_json(text, 1.5, 3).is_err());
    }

    #[test]
    fn curve_starts_perfect_and_falls() {
        let points: Value = serde_json::from_str(&degradation_curve_json(&[0.05, 0.3], 200, 40, 2).unwrap()).unwrap();
        let ndcg: Vec<f64> = points.as_array().unwrap().iter().map(|p| p["ndcg_at_10"].as_f64().unwrap()).collect();
        assert_eq!(ndcg.len(), 3);
        assert_eq!(ndcg[0], 1.0);
        assert!(ndcg[2] < ndcg[0]);
        assert!(degradation_curve_json(&[0.1], 10, 20, 1).is_err());
    }

    #[test]
    fn ranking_scores() {
        let out: Value = serde_json::from_str(&score_ranking_json(&[0, 1, 0], &[1], 3).unwrap()).unwrap();
        assert_eq!(out["relevant"], 2);
        assert_eq!(out["mrr"], 0.5);
        assert_eq!(out["recall"], 0.5);
        assert_eq!(out["average_precision"], 0.25);
        assert!(score_ranking_json(&[0, 0], &[], 2).is_err());
    }
}
