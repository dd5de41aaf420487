//! Synthetic self-retrieval datasets.
//!
//! Every query is a verbatim copy of one document and that document is its
//! only relevant judgment, so a deterministic embedder retrieves it at rank 1
//! on clean input. Documents draw words from a small shared vocabulary so
//! that corrupted queries have close competitors.

use std::collections::HashSet;
use std::path::Path;

use crate::corpus::{self, Document, Judgment, Query};
use crate::rng::SplitMix64;
use crate::tokenizer::{Vocabulary, CLS, PAD, SEP, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub num_queries: usize,
    pub vocab_words: usize,
    pub doc_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            num_queries: 200,
            vocab_words: 32,
            doc_len: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub vocab: Vocabulary,
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Vec<Judgment>,
}

fn word(i: usize) -> String {
    // Letters only, so each word is a single WordPiece token.
    let mut s = String::from("w");
    let mut n = i;
    loop {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s
}

/// Generates a dataset; distinct documents have distinct word multisets.
///
/// Panics if `num_queries > num_docs` or the vocabulary is too small to give
/// `num_docs` distinct documents.
pub fn generate(spec: SyntheticSpec) -> SyntheticDataset {
    assert!(spec.num_queries <= spec.num_docs, "more queries than documents");
    assert!(spec.vocab_words >= 2 && spec.doc_len >= 1);
    let words: Vec<String> = (0..spec.vocab_words).map(word).collect();
    let vocab = Vocabulary::from_tokens([PAD, UNK, CLS, SEP].into_iter().map(String::from).chain(words.iter().cloned()))
        .expect("generated vocabulary is well-formed");

    let mut rng = SplitMix64::new(spec.seed);
    let mut seen = HashSet::new();
    let mut corpus = Vec::with_capacity(spec.num_docs);
    let mut attempts = 0usize;
    while corpus.len() < spec.num_docs {
        attempts += 1;
        assert!(attempts < spec.num_docs * 100, "vocabulary too small for distinct documents");
        let picks: Vec<usize> = (0..spec.doc_len)
            .map(|_| rng.next_below(spec.vocab_words as u64) as usize)
            .collect();
        let mut key = picks.clone();
        key.sort_unstable();
        if !seen.insert(key) {
            continue;
        }
        let text = picks.iter().map(|&w| words[w].as_str()).collect::<Vec<_>>().join(" ");
        corpus.push(Document {
            id: format!("d{:05}", corpus.len()),
            title: String::new(),
            text,
        });
    }

    // Partial Fisher-Yates to choose which documents get a query.
    let mut order: Vec<usize> = (0..spec.num_docs).collect();
    for i in 0..spec.num_queries {
        let j = i + rng.next_below((spec.num_docs - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut qrels = Vec::with_capacity(spec.num_queries);
    for (i, &d) in order[..spec.num_queries].iter().enumerate() {
        let qid = format!("q{i:04}");
        queries.push(Query {
            id: qid.clone(),
            text: corpus[d].text.clone(),
        });
        qrels.push(Judgment {
            query_id: qid,
            doc_id: corpus[d].id.clone(),
            relevance: 1,
        });
    }
    SyntheticDataset {
        vocab,
        corpus,
        queries,
        qrels,
    }
}

impl SyntheticDataset {
    /// Writes `corpus.jsonl`, `queries.jsonl`, `qrels.tsv` and `vocab.txt`
    /// into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        corpus::write_corpus(dir.join("corpus.jsonl"), &self.corpus)?;
        corpus::write_queries(dir.join("queries.jsonl"), &self.queries)?;
        corpus::write_qrels(dir.join("qrels.tsv"), &self.qrels)?;
        let mut vocab = self.vocab.tokens().join("\n");
        vocab.push('\n');
        std::fs::write(dir.join("vocab.txt"), vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::tokenize;

    #[test]
    fn words_are_single_tokens() {
        let ds = generate(SyntheticSpec { num_docs: 50, num_queries: 10, ..Default::default() });
        for d in &ds.corpus {
            let ids = tokenize(&d.text, &ds.vocab);
            assert_eq!(ids.len(), 6);
            assert!(!ids.contains(&ds.vocab.unk_id()));
        }
    }

    #[test]
    fn queries_copy_their_relevant_doc() {
        let ds = generate(SyntheticSpec { num_docs: 100, num_queries: 30, seed: 5, ..Default::default() });
        assert_eq!(ds.queries.len(), 30);
        for (q, j) in ds.queries.iter().zip(&ds.qrels) {
            let doc = ds.corpus.iter().find(|d| d.id == j.doc_id).unwrap();
            assert_eq!(q.text, doc.text);
            assert_eq!(q.id, j.query_id);
        }
        let targets: HashSet<_> = ds.qrels.iter().map(|j| &j.doc_id).collect();
        assert_eq!(targets.len(), 30);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SyntheticSpec { num_docs: 40, num_queries: 5, seed: 9, ..Default::default() };
        assert_eq!(generate(spec).corpus, generate(spec).corpus);
        let other = SyntheticSpec { seed: 10, ..spec };
        assert_ne!(generate(spec).corpus, generate(other).corpus);
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(SyntheticSpec { num_docs: 20, num_queries: 4, ..Default::default() });
        ds.write_to(dir.path()).unwrap();
        assert_eq!(corpus::load_corpus(dir.path().join("corpus.jsonl")).unwrap(), ds.corpus);
        assert_eq!(corpus::load_queries(dir.path().join("queries.jsonl")).unwrap(), ds.queries);
        assert_eq!(corpus::load_qrels(dir.path().join("qrels.tsv")).unwrap(), ds.qrels);
        assert_eq!(Vocabulary::load(dir.path().join("vocab.txt")).unwrap(), ds.vocab);
    }
}
