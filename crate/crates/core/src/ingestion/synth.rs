//! Synthetic corpora with Zipf item popularity and log-normal set sizes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rayon::prelude::*;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};
use crate::model::{Database, ItemSet, UserRecord};
use crate::streams::sub_stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_users: usize,
    pub vocab_size: usize,
    /// Item of rank r is drawn with probability ∝ r^-exponent.
    pub exponent: f64,
    /// Set sizes are round(LogNormal(mu, sigma)) clipped to [1, vocab_size].
    pub size_mu: f64,
    pub size_sigma: f64,
    pub seed: u64,
}

impl SynthParams {
    /// Default set sizes are the least-squares log-normal fit to the user
    /// fractions 2.78%, 29.82%, 79.16%, 93.13%, 99.59% at |W| ≤ 1, 10, 50,
    /// 100, 300 of a large public forum corpus.
    pub fn new(n_users: usize, vocab_size: usize, exponent: f64, seed: u64) -> Self {
        SynthParams {
            n_users,
            vocab_size,
            exponent,
            size_mu: 2.96,
            size_sigma: 1.16,
            seed,
        }
    }

    pub fn with_set_sizes(mut self, mu: f64, sigma: f64) -> Self {
        self.size_mu = mu;
        self.size_sigma = sigma;
        self
    }
}

pub fn user_id(k: usize) -> String {
    format!("u{k:06}")
}

pub fn item_name(rank: usize) -> String {
    format!("w{rank}")
}

/// Generates a corpus. Each user draws a set size and then that many distinct
/// items, sequentially without replacement, from the Zipf weights.
///
/// Users draw from their own stream keyed by `(seed, user id)`, so the output
/// is the same however the work is split across threads.
pub fn synth_zipf_corpus(params: &SynthParams) -> Result<Database> {
    if params.vocab_size < 1 {
        return Err(DpsuError::invalid("vocab_size must be at least 1"));
    }
    if !(params.exponent.is_finite() && params.exponent >= 0.0) {
        return Err(DpsuError::invalid(format!("exponent must be finite and >= 0, got {}", params.exponent)));
    }
    let sizes = LogNormal::new(params.size_mu, params.size_sigma)
        .map_err(|e| DpsuError::invalid(format!("set-size law: {e}")))?;
    let weights: Vec<f64> = (1..=params.vocab_size)
        .map(|r| (r as f64).powf(-params.exponent))
        .collect();
    let popularity = WeightedIndex::new(&weights)
        .map_err(|e| DpsuError::invalid(format!("zipf weights: {e}")))?;

    let users = (1..=params.n_users)
        .into_par_iter()
        .map(|k| {
            let id = user_id(k);
            let mut rng = sub_stream(params.seed, "synth", id.as_bytes());
            let size = (sizes.sample(&mut rng).round() as usize).clamp(1, params.vocab_size);
            let mut picked = std::collections::BTreeSet::new();
            // Redrawing duplicates is sequential weighted sampling without
            // replacement; fall back to exponential keys if it stalls.
            let mut budget = 32 * size + 64;
            while picked.len() < size && budget > 0 {
                picked.insert(popularity.sample(&mut rng));
                budget -= 1;
            }
            if picked.len() < size {
                picked = index::sample_weighted(&mut rng, weights.len(), |i| weights[i], size)
                    .expect("weights are positive and finite")
                    .into_iter()
                    .collect();
            }
            let items: ItemSet = picked.into_iter().map(|i| item_name(i + 1)).collect();
            UserRecord { user_id: id, items }
        })
        .collect();
    Database::new(users)
}
