//! Additive token-ID noise.
//!
//! Each position independently draws `r ~ U[0,1)`. When `r < epsilon` a
//! shift `d ~ U{0..9}` is drawn and the id becomes `(id + d) mod V`. Every
//! query gets its own stream seeded from the master seed and a hash of the
//! query id, so results do not depend on query order or scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{fnv1a64, SplitMix64};
use crate::tokenizer::{decode, TokenId, TokenSequence, TokenizerError, Vocabulary};

/// Exclusive upper bound of the additive shift.
pub const MAX_SHIFT: u64 = 10;

pub const DEFAULT_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub epsilon: f64,
    pub master_seed: u64,
    #[serde(default = "default_include_special")]
    pub include_special: bool,
}

fn default_include_special() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("perturbation rate must lie in [0, 1], got {0}")]
pub struct InvalidRate(pub f64);

impl PerturbationParams {
    pub fn new(epsilon: f64, master_seed: u64) -> Result<Self, InvalidRate> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(InvalidRate(epsilon));
        }
        Ok(Self {
            epsilon,
            master_seed,
            include_special: true,
        })
    }

    pub fn with_include_special(mut self, include_special: bool) -> Self {
        self.include_special = include_special;
        self
    }
}

/// What the perturbation needs to know about the token space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpace {
    pub vocab_size: u32,
    /// Ids skipped when `include_special` is false.
    pub special_ids: Vec<TokenId>,
}

impl TokenSpace {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        Self {
            vocab_size: vocab.len() as u32,
            special_ids: vocab.framing_ids().to_vec(),
        }
    }
}

pub fn query_stream(master_seed: u64, query_id: &str) -> SplitMix64 {
    SplitMix64::new(master_seed ^ fnv1a64(query_id.as_bytes()))
}

/// Applies the noise to one sequence, consuming draws from `stream`.
pub fn perturb_sequence(
    seq: &TokenSequence,
    space: &TokenSpace,
    params: &PerturbationParams,
    stream: &mut SplitMix64,
) -> TokenSequence {
    let v = u64::from(space.vocab_size);
    let ids = seq
        .ids()
        .iter()
        .map(|&id| {
            if !params.include_special && space.special_ids.contains(&id) {
                return id;
            }
            if stream.next_f64() < params.epsilon {
                let d = stream.next_below(MAX_SHIFT);
                ((u64::from(id) + d) % v) as TokenId
            } else {
                id
            }
        })
        .collect();
    TokenSequence(ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub query_id: String,
    pub positions_changed: Vec<usize>,
    pub before: TokenSequence,
    pub after: TokenSequence,
}

impl PerturbationRecord {
    fn new(query_id: &str, before: TokenSequence, after: TokenSequence) -> Self {
        let positions_changed = before
            .ids()
            .iter()
            .zip(after.ids())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        Self {
            query_id: query_id.to_string(),
            positions_changed,
            before,
            after,
        }
    }
}

/// Perturbs every query with its own id-seeded stream. Output order follows
/// input order.
pub fn perturb_query_set(
    queries: &[(String, TokenSequence)],
    space: &TokenSpace,
    params: &PerturbationParams,
) -> Vec<PerturbationRecord> {
    queries
        .par_iter()
        .map(|(qid, seq)| {
            let mut stream = query_stream(params.master_seed, qid);
            let after = perturb_sequence(seq, space, params, &mut stream);
            PerturbationRecord::new(qid, seq.clone(), after)
        })
        .collect()
}

/// Expected fraction of positions whose id actually changes. A shift of
/// zero is a legal draw that leaves the token alone.
pub fn expected_change_rate(epsilon: f64) -> f64 {
    epsilon * (MAX_SHIFT - 1) as f64 / MAX_SHIFT as f64
}

pub const BEFORE_HEADER: &str = "Previous Input";
pub const AFTER_HEADER: &str = "After Perturbation";

/// Decoded (before, after) text pairs.
pub fn render_perturbation_table(
    records: &[PerturbationRecord],
    vocab: &Vocabulary,
) -> Result<Vec<(String, String)>, TokenizerError> {
    records
        .iter()
        .map(|r| Ok((decode(r.before.ids(), vocab)?, decode(r.after.ids(), vocab)?)))
        .collect()
}

/// Plain-text two-column table with a header row.
pub fn format_perturbation_table(rows: &[(String, String)]) -> String {
    let width = rows
        .iter()
        .map(|(b, _)| b.chars().count())
        .chain(std::iter::once(BEFORE_HEADER.len()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{BEFORE_HEADER:<width$} | {AFTER_HEADER}\n");
    out.push_str(&format!("{}-+-{}\n", "-".repeat(width), "-".repeat(AFTER_HEADER.len())));
    for (before, after) in rows {
        let pad = width - before.chars().count();
        out.push_str(&format!("{before}{} | {after}\n", " ".repeat(pad)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(v: u32) -> TokenSpace {
        TokenSpace {
            vocab_size: v,
            special_ids: vec![2, 3, 0],
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let seq = TokenSequence(vec![2, 17, 99, 3, 0]);
        let params = PerturbationParams::new(0.0, 7).unwrap();
        let mut s = SplitMix64::new(1);
        assert_eq!(perturb_sequence(&seq, &space(1000), &params, &mut s), seq);
    }

    #[test]
    fn full_rate_shifts_by_at_most_nine() {
        let seq = TokenSequence((0..500).collect());
        let params = PerturbationParams::new(1.0, 0).unwrap();
        let v = 30522;
        let mut s = SplitMix64::new(99);
        let out = perturb_sequence(&seq, &space(v), &params, &mut s);
        for (a, b) in seq.ids().iter().zip(out.ids()) {
            let delta = (b + v - a) % v;
            assert!(delta <= 9, "delta {delta}");
        }
    }

    #[test]
    fn shifts_wrap_modulo_vocab() {
        let seq = TokenSequence(vec![9; 200]);
        let params = PerturbationParams::new(1.0, 0).unwrap();
        let mut s = SplitMix64::new(5);
        let out = perturb_sequence(&seq, &space(10), &params, &mut s);
        assert!(out.ids().iter().all(|&id| id < 10));
        assert!(out.ids().iter().any(|&id| id < 9));
    }

    #[test]
    fn specials_untouched_when_excluded() {
        let seq = TokenSequence(vec![2, 50, 51, 3, 0, 0]);
        let params = PerturbationParams::new(1.0, 0).unwrap().with_include_special(false);
        // Only the two content positions draw, so the stream is advanced by
        // exactly those draws.
        let mut s = SplitMix64::new(11);
        let out = perturb_sequence(&seq, &space(1000), &params, &mut s);
        assert_eq!(out.ids()[0], 2);
        assert_eq!(&out.ids()[3..], &[3, 0, 0]);
        let mut replay = SplitMix64::new(11);
        let content = perturb_sequence(
            &TokenSequence(vec![50, 51]),
            &space(1000),
            &PerturbationParams::new(1.0, 0).unwrap(),
            &mut replay,
        );
        assert_eq!(&out.ids()[1..3], content.ids());
    }

    #[test]
    fn draws_follow_fixed_stream_protocol() {
        // Replays the stream by hand: r = u64 >> 11 * 2^-53, d = u64 mod 10.
        let seq = TokenSequence(vec![100, 200, 300, 400]);
        let params = PerturbationParams::new(0.5, 0).unwrap();
        let mut s = SplitMix64::new(2024);
        let out = perturb_sequence(&seq, &space(1000), &params, &mut s);
        let mut oracle = SplitMix64::new(2024);
        let mut expected = Vec::new();
        for &id in seq.ids() {
            let r = (oracle.next_u64() >> 11) as f64 / 9007199254740992.0;
            if r < 0.5 {
                expected.push((id as u64 + oracle.next_u64() % 10) as u32 % 1000);
            } else {
                expected.push(id);
            }
        }
        assert_eq!(out.ids(), &expected[..]);
    }

    #[test]
    fn rate_out_of_range_rejected() {
        assert!(PerturbationParams::new(1.5, 0).is_err());
        assert!(PerturbationParams::new(-0.1, 0).is_err());
        assert!(PerturbationParams::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn expected_change_rate_values() {
        assert_eq!(expected_change_rate(0.0), 0.0);
        assert!((expected_change_rate(1.0) - 0.9).abs() < 1e-15);
        assert!((expected_change_rate(0.1) - 0.09).abs() < 1e-15);
    }

    fn queries(n: usize) -> Vec<(String, TokenSequence)> {
        (0..n)
            .map(|i| {
                let ids = std::iter::once(2)
                    .chain((0..12).map(|j| 100 + ((i * 31 + j * 7) % 500) as u32))
                    .chain([3, 0])
                    .collect();
                (format!("q{i}"), TokenSequence(ids))
            })
            .collect()
    }

    #[test]
    fn query_set_is_deterministic() {
        let qs = queries(50);
        let p = PerturbationParams::new(0.2, 42).unwrap();
        let a = perturb_query_set(&qs, &space(1000), &p);
        let b = perturb_query_set(&qs, &space(1000), &p);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let qs = queries(100);
        let a = perturb_query_set(&qs, &space(1000), &PerturbationParams::new(0.1, 1).unwrap());
        let b = perturb_query_set(&qs, &space(1000), &PerturbationParams::new(0.1, 2).unwrap());
        let differing: usize = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.after.ids().iter().zip(y.after.ids()).filter(|(p, q)| p != q).count())
            .sum();
        assert!(differing >= 1);
    }

    #[test]
    fn reordering_queries_keeps_each_output() {
        let qs = queries(40);
        let p = PerturbationParams::new(0.3, 9).unwrap();
        let forward = perturb_query_set(&qs, &space(1000), &p);
        let mut reversed_in = qs.clone();
        reversed_in.reverse();
        let mut reversed = perturb_query_set(&reversed_in, &space(1000), &p);
        reversed.reverse();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn records_list_changed_positions() {
        let qs = queries(30);
        let p = PerturbationParams::new(0.5, 3).unwrap();
        for r in perturb_query_set(&qs, &space(1000), &p) {
            for (i, (a, b)) in r.before.ids().iter().zip(r.after.ids()).enumerate() {
                assert_eq!(a != b, r.positions_changed.contains(&i));
            }
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "what", "is", "the", "in", "##rade", "##rm", "used",
            "for",
        ])
        .unwrap()
    }

    #[test]
    fn identity_record_renders_equal_columns() {
        let v = vocab();
        let seq = crate::tokenizer::encode("what is theraderm used for", &v, 10).unwrap();
        let rec = PerturbationRecord::new("q1", seq.clone(), seq);
        let rows = render_perturbation_table(&[rec], &v).unwrap();
        assert_eq!(rows[0].0, rows[0].1);
    }

    #[test]
    fn one_changed_subword_differs_in_one_word() {
        let v = vocab();
        let before = crate::tokenizer::encode("what is theraderm used for", &v, 9).unwrap();
        let mut ids = before.0.clone();
        ids[3] = v.id("in").unwrap();
        let rec = PerturbationRecord::new("q1", before, TokenSequence(ids));
        let rows = render_perturbation_table(&[rec], &v).unwrap();
        let diff: Vec<_> = rows[0]
            .0
            .split(' ')
            .zip(rows[0].1.split(' '))
            .filter(|(a, b)| a != b)
            .collect();
        assert_eq!(diff, vec![("theraderm", "inraderm")]);
    }

    #[test]
    fn empty_records_empty_table() {
        assert!(render_perturbation_table(&[], &vocab()).unwrap().is_empty());
        let text = format_perturbation_table(&[]);
        assert!(text.starts_with("Previous Input"));
        assert_eq!(text.lines().count(), 2);
    }
}
