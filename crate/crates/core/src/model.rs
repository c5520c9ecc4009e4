//! Shared data types: databases of user item sets, weighted histograms,
//! privacy parameters and mechanism configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};

/// Absolute slack allowed when checking per-user budgets and contraction.
///
/// The water-filling loops accumulate rounding error of a few ulps; every
/// budget and invariant check in the crate uses this one constant.
pub const EPS_BUDGET: f64 = 1e-12;

/// An element of the item universe. Ordered bytewise where order matters.
pub type Item = String;

/// A finite set of items, iterated in bytewise order.
pub type ItemSet = BTreeSet<Item>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = DpsuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(DpsuError::invalid(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub items: ItemSet,
}

impl UserRecord {
    pub fn new<I, S>(user_id: impl Into<String>, items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Item>,
    {
        UserRecord {
            user_id: user_id.into(),
            items: items.into_iter().map(Into::into).collect(),
        }
    }
}

/// Users and their item sets. User ids are unique and every set is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<UserRecord>", into = "Vec<UserRecord>")]
pub struct Database {
    users: Vec<UserRecord>,
}

impl Database {
    pub fn new(users: Vec<UserRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(users.len());
        for user in &users {
            if !seen.insert(user.user_id.as_str()) {
                return Err(DpsuError::InvalidDatabase(format!(
                    "duplicate user id `{}`",
                    user.user_id
                )));
            }
            if user.items.is_empty() {
                return Err(DpsuError::InvalidDatabase(format!(
                    "user `{}` has an empty item set",
                    user.user_id
                )));
            }
        }
        Ok(Database { users })
    }

    /// Convenience constructor used heavily in tests and bindings.
    pub fn from_sets<U, I, S>(sets: impl IntoIterator<Item = (U, I)>) -> Result<Self>
    where
        U: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<Item>,
    {
        Database::new(
            sets.into_iter()
                .map(|(id, items)| UserRecord::new(id, items))
                .collect(),
        )
    }

    pub fn empty() -> Self {
        Database::default()
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// The neighbouring database with `user_id` removed.
    pub fn without_user(&self, user_id: &str) -> Database {
        Database {
            users: self
                .users
                .iter()
                .filter(|u| u.user_id != user_id)
                .cloned()
                .collect(),
        }
    }

    /// Same users sorted by id; equality of canonical forms is equality of
    /// databases as sets of users.
    pub fn canonical(mut self) -> Database {
        self.users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        self
    }

    /// The union of all item sets.
    pub fn item_union(&self) -> ItemSet {
        self.users
            .iter()
            .flat_map(|u| u.items.iter().cloned())
            .collect()
    }
}

impl TryFrom<Vec<UserRecord>> for Database {
    type Error = DpsuError;

    fn try_from(users: Vec<UserRecord>) -> Result<Self> {
        Database::new(users)
    }
}

impl From<Database> for Vec<UserRecord> {
    fn from(db: Database) -> Self {
        db.users
    }
}

/// Sparse map from item to a non-negative weight.
///
/// Items that are not stored have weight zero; stored weights are finite and
/// strictly positive, so the stored keys are exactly the support.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightedHistogram {
    weights: BTreeMap<Item, f64>,
}

impl WeightedHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a histogram from `(item, weight)` pairs; zero weights are dropped.
    ///
    /// Panics on negative or non-finite weights.
    pub fn from_pairs<S: Into<Item>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Self {
        let mut h = WeightedHistogram::new();
        for (item, w) in pairs {
            h.set(item.into(), w);
        }
        h
    }

    pub fn get(&self, item: &str) -> f64 {
        self.weights.get(item).copied().unwrap_or(0.0)
    }

    /// Sets the weight of `item`. A weight of zero removes it from the support.
    pub fn set(&mut self, item: Item, weight: f64) {
        assert!(
            weight.is_finite() && weight >= 0.0,
            "histogram weights must be finite and non-negative, got {weight}"
        );
        if weight > 0.0 {
            self.weights.insert(item, weight);
        } else {
            self.weights.remove(&item);
        }
    }

    /// Adds a non-negative amount to `item`'s weight.
    pub fn add(&mut self, item: &str, amount: f64) {
        debug_assert!(amount >= 0.0 && amount.is_finite());
        if amount <= 0.0 {
            return;
        }
        match self.weights.get_mut(item) {
            Some(w) => *w += amount,
            None => {
                self.weights.insert(item.to_owned(), amount);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.weights.contains_key(item)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Item, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (k, *v))
    }

    pub fn support(&self) -> impl Iterator<Item = &Item> + '_ {
        self.weights.keys()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Copy of this histogram with entries outside `keep`'s support removed.
    pub fn restricted_to(&self, keep: &WeightedHistogram) -> WeightedHistogram {
        WeightedHistogram {
            weights: self
                .weights
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}

/// Walks the union of both supports in item order, yielding `(a[u], b[u])`.
fn zip_union<'a>(
    a: &'a WeightedHistogram,
    b: &'a WeightedHistogram,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let mut left = a.weights.iter().peekable();
    let mut right = b.weights.iter().peekable();
    std::iter::from_fn(move || match (left.peek(), right.peek()) {
        (None, None) => None,
        (Some(_), None) => left.next().map(|(_, v)| (*v, 0.0)),
        (None, Some(_)) => right.next().map(|(_, v)| (0.0, *v)),
        (Some((ka, _)), Some((kb, _))) => match ka.cmp(kb) {
            std::cmp::Ordering::Less => left.next().map(|(_, v)| (*v, 0.0)),
            std::cmp::Ordering::Greater => right.next().map(|(_, v)| (0.0, *v)),
            std::cmp::Ordering::Equal => {
                let (_, va) = left.next().unwrap();
                let (_, vb) = right.next().unwrap();
                Some((*va, *vb))
            }
        },
    })
}

/// ℓp distance between two histograms over the union of their supports.
pub fn lp_distance(h1: &WeightedHistogram, h2: &WeightedHistogram, p: Norm) -> f64 {
    match p {
        Norm::L1 => zip_union(h1, h2).map(|(a, b)| (a - b).abs()).sum(),
        Norm::L2 => zip_union(h1, h2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    }
}

/// `true` iff `h1[u] >= h2[u]` for every item in either support.
pub fn dominates(h1: &WeightedHistogram, h2: &WeightedHistogram) -> bool {
    zip_union(h1, h2).all(|(a, b)| a >= b)
}

/// Pointwise dominance with an absolute slack of `tol`.
pub fn dominates_within(h1: &WeightedHistogram, h2: &WeightedHistogram, tol: f64) -> bool {
    zip_union(h1, h2).all(|(a, b)| a >= b - tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let params = PrivacyParams { epsilon, delta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(DpsuError::invalid(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpsuError::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Laplace,
    Gaussian,
}

impl NoiseFamily {
    /// The norm in which histogram sensitivity is measured for this noise.
    pub fn norm(self) -> Norm {
        match self {
            NoiseFamily::Laplace => Norm::L1,
            NoiseFamily::Gaussian => Norm::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    CountLaplace,
    CountGaussian,
    WeightedLaplace,
    WeightedGaussian,
    PolicyLaplace,
    PolicyGaussian,
    /// Greedy policy; unbounded sensitivity, so never used for a release.
    GreedyDemo,
}

impl Mechanism {
    /// The six mechanisms that carry an (ε, δ) guarantee.
    pub const PRIVATE: [Mechanism; 6] = [
        Mechanism::CountLaplace,
        Mechanism::CountGaussian,
        Mechanism::WeightedLaplace,
        Mechanism::WeightedGaussian,
        Mechanism::PolicyLaplace,
        Mechanism::PolicyGaussian,
    ];

    pub fn noise_family(self) -> NoiseFamily {
        match self {
            Mechanism::CountLaplace
            | Mechanism::WeightedLaplace
            | Mechanism::PolicyLaplace
            | Mechanism::GreedyDemo => NoiseFamily::Laplace,
            Mechanism::CountGaussian | Mechanism::WeightedGaussian | Mechanism::PolicyGaussian => {
                NoiseFamily::Gaussian
            }
        }
    }

    pub fn norm(self) -> Norm {
        self.noise_family().norm()
    }

    /// Policy mechanisms use the cutoff Γ.
    pub fn uses_cutoff(self) -> bool {
        matches!(
            self,
            Mechanism::PolicyLaplace | Mechanism::PolicyGaussian | Mechanism::GreedyDemo
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::CountLaplace => "count-laplace",
            Mechanism::CountGaussian => "count-gaussian",
            Mechanism::WeightedLaplace => "weighted-laplace",
            Mechanism::WeightedGaussian => "weighted-gaussian",
            Mechanism::PolicyLaplace => "policy-laplace",
            Mechanism::PolicyGaussian => "policy-gaussian",
            Mechanism::GreedyDemo => "greedy-demo",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = DpsuError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        [
            Mechanism::CountLaplace,
            Mechanism::CountGaussian,
            Mechanism::WeightedLaplace,
            Mechanism::WeightedGaussian,
            Mechanism::PolicyLaplace,
            Mechanism::PolicyGaussian,
            Mechanism::GreedyDemo,
        ]
        .into_iter()
        .find(|m| m.name() == norm)
        .ok_or_else(|| DpsuError::invalid(format!("unknown mechanism `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub mechanism: Mechanism,
    /// Maximum number of items a single user contributes.
    pub delta0: usize,
    /// Cutoff offset: Γ = ρ + α · noise scale.
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_passes")]
    pub passes: u32,
    /// Must be set to run with `passes > 1`; clears the report's `private` flag.
    #[serde(default)]
    pub experimental: bool,
}

fn default_passes() -> u32 {
    1
}

impl MechanismConfig {
    pub fn new(mechanism: Mechanism, delta0: usize, alpha: f64, seed: u64) -> Self {
        MechanismConfig {
            mechanism,
            delta0,
            alpha,
            seed,
            passes: 1,
            experimental: false,
        }
    }

    pub fn with_passes(mut self, passes: u32) -> Self {
        self.passes = passes;
        self
    }

    pub fn with_experimental(mut self, experimental: bool) -> Self {
        self.experimental = experimental;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta0 < 1 {
            return Err(DpsuError::invalid("delta0 must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(DpsuError::invalid(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.passes < 1 {
            return Err(DpsuError::invalid("passes must be at least 1"));
        }
        Ok(())
    }
}
