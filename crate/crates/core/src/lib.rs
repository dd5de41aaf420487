//! Robustness benchmarking for dense retrievers under token-ID perturbation.
//!
//! The pipeline tokenizes queries, perturbs their token ids, embeds them,
//! retrieves by cosine similarity over a flat index, scores the rankings
//! against relevance judgments and reports clean-vs-perturbed drops.

pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod perturb;
pub mod retrieval;
pub mod runner;
pub mod rng;
pub mod tokenizer;
