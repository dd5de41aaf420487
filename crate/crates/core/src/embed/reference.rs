use crate::rng::SplitMix64;
use crate::tokenizer::{TokenId, TokenSequence};

use super::{EmbedError, EmbeddingVector};

pub const DEFAULT_DIM: usize = 64;

const TOKEN_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Deterministic unit vector for a token id.
///
/// Components are `2u - 1` for `u ~ U[0,1)` drawn from a SplitMix64 stream
/// keyed on `(seed, token_id)`, then L2-normalized.
pub fn reference_token_vector(token_id: TokenId, dim: usize, seed: u64) -> Result<EmbeddingVector, EmbedError> {
    let raw = raw_token_vector(token_id, dim, seed)?;
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok(EmbeddingVector(raw.iter().map(|x| (x / norm) as f32).collect()))
}

fn raw_token_vector(token_id: TokenId, dim: usize, seed: u64) -> Result<Vec<f64>, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::ZeroDim);
    }
    let key = (u64::from(token_id) + 1).wrapping_mul(TOKEN_MIX);
    let mut rng = SplitMix64::new(seed ^ key);
    Ok((0..dim).map(|_| 2.0 * rng.next_f64() - 1.0).collect())
}

fn unit_f64(token_id: TokenId, dim: usize, seed: u64) -> Result<Vec<f64>, EmbedError> {
    let raw = raw_token_vector(token_id, dim, seed)?;
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok(raw.into_iter().map(|x| x / norm).collect())
}

/// Mean-pools token vectors over every non-`[PAD]` position and
/// L2-normalizes the result.
pub fn embed_sequence(
    seq: &TokenSequence,
    pad_id: TokenId,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingVector, EmbedError> {
    pool(seq.ids().iter().copied().filter(|&id| id != pad_id), dim, seed)
}

fn pool(ids: impl Iterator<Item = TokenId>, dim: usize, seed: u64) -> Result<EmbeddingVector, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::ZeroDim);
    }
    let mut sum = vec![0.0f64; dim];
    let mut count = 0usize;
    for id in ids {
        for (acc, x) in sum.iter_mut().zip(unit_f64(id, dim, seed)?) {
            *acc += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(EmbedError::AllPadding);
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    // Dividing by the count is absorbed by normalization.
    Ok(EmbeddingVector(sum.iter().map(|x| (x / norm) as f32).collect()))
}

/// Reference embedder bound to a dimension, seed and padding id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub pad_id: TokenId,
}

impl ReferenceEmbedder {
    pub fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingVector, EmbedError> {
        embed_sequence(seq, self.pad_id, self.dim, self.seed)
    }

    /// Pools `seq` over the positions where `mask_source` is not `[PAD]`.
    ///
    /// Used for perturbed queries: a padding slot whose id was shifted still
    /// sits outside the attention mask of the original encoding.
    pub fn embed_masked(&self, seq: &TokenSequence, mask_source: &TokenSequence) -> Result<EmbeddingVector, EmbedError> {
        let ids = seq
            .ids()
            .iter()
            .zip(mask_source.ids().iter().chain(std::iter::repeat(&self.pad_id)))
            .filter(|(_, &m)| m != self.pad_id)
            .map(|(&id, _)| id);
        pool(ids, self.dim, self.seed)
    }
}
