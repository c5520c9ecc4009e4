//! Descriptive statistics of a corpus and the k-anonymity baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Database, Item, ItemSet};

pub const DEFAULT_THRESHOLDS: [usize; 5] = [1, 10, 50, 100, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_users: usize,
    pub n_items: usize,
    /// Number of users holding each item.
    pub item_counts: BTreeMap<Item, usize>,
    /// `(rank, user_count)`, most popular first; ties broken by item.
    pub rank_frequency: Vec<(usize, usize)>,
    /// Threshold T → fraction of users with |W| ≤ T.
    pub set_size_percentiles: BTreeMap<usize, f64>,
    /// Negated least-squares slope of ln(count) on ln(rank) over ranks with
    /// count ≥ 2; `None` with fewer than two such ranks.
    pub zipf_exponent_fit: Option<f64>,
}

/// Statistics at the default thresholds plus `extra_thresholds`.
pub fn corpus_stats(db: &Database, extra_thresholds: &[usize]) -> CorpusStats {
    let mut item_counts: BTreeMap<Item, usize> = BTreeMap::new();
    for user in db.users() {
        for item in &user.items {
            *item_counts.entry(item.clone()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&Item, usize)> = item_counts.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let rank_frequency: Vec<(usize, usize)> =
        ranked.iter().enumerate().map(|(r, (_, c))| (r + 1, *c)).collect();

    let mut sizes: Vec<usize> = db.users().iter().map(|u| u.items.len()).collect();
    sizes.sort_unstable();
    let set_size_percentiles = DEFAULT_THRESHOLDS
        .iter()
        .chain(extra_thresholds)
        .map(|&t| {
            let at_most = sizes.partition_point(|&s| s <= t);
            let frac = if sizes.is_empty() { 0.0 } else { at_most as f64 / sizes.len() as f64 };
            (t, frac)
        })
        .collect();

    let points: Vec<(f64, f64)> = rank_frequency
        .iter()
        .filter(|(_, c)| *c >= 2)
        .map(|&(r, c)| ((r as f64).ln(), (c as f64).ln()))
        .collect();

    CorpusStats {
        n_users: db.len(),
        n_items: item_counts.len(),
        zipf_exponent_fit: least_squares_slope(&points).map(|s| -s),
        rank_frequency,
        set_size_percentiles,
        item_counts,
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAnonymity {
    pub k: usize,
    /// |S_k|, the number of items held by at least k users.
    pub size_sk: usize,
    /// |released| / |S_k|; absent when S_k is empty. Can exceed 1.
    pub coverage: Option<f64>,
}

/// Compares a released set against the items held by at least `k` users.
pub fn k_anonymity_baseline(db: &Database, k: usize, released: &ItemSet) -> KAnonymity {
    let k = k.max(1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for user in db.users() {
        for item in &user.items {
            *counts.entry(item).or_default() += 1;
        }
    }
    let size_sk = counts.values().filter(|&&c| c >= k).count();
    KAnonymity {
        k,
        size_sk,
        coverage: (size_sk > 0).then(|| released.len() as f64 / size_sk as f64),
    }
}
