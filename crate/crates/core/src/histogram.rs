//! Sequential construction of the weighted histogram.
//!
//! Users are visited in the order of a keyed hash of their id, each user's
//! set is capped to Δ0 items, and the update policy is applied once per user
//! (once per pass in multi-pass mode).

use rand::seq::index;

use crate::error::Result;
use crate::model::{Database, ItemSet, MechanismConfig, UserRecord, WeightedHistogram};
use crate::policies::UpdatePolicy;
use crate::streams::{keyed_hash128, sub_stream};

const ORDER_DOMAIN: &str = "order";
const CAP_DOMAIN: &str = "cap";

/// Users of a database in hash order.
#[derive(Debug, Clone)]
pub struct OrderedDatabase<'a> {
    users: Vec<&'a UserRecord>,
}

impl<'a> OrderedDatabase<'a> {
    pub fn users(&self) -> &[&'a UserRecord] {
        &self.users
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.users.iter().map(|u| u.user_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Ordering key of a user under `seed`.
pub fn ordering_key(user_id: &str, seed: u64) -> u128 {
    keyed_hash128(seed, ORDER_DOMAIN, user_id.as_bytes())
}

/// Sorts users by `(hash(user_id), user_id)`; independent of input order.
pub fn order_users(db: &Database, seed: u64) -> OrderedDatabase<'_> {
    let mut keyed: Vec<(u128, &UserRecord)> = db
        .users()
        .iter()
        .map(|u| (ordering_key(&u.user_id, seed), u))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.user_id.cmp(&b.1.user_id)));
    OrderedDatabase {
        users: keyed.into_iter().map(|(_, u)| u).collect(),
    }
}

/// Caps a user's set at `delta0` items.
///
/// Larger sets are replaced by a uniform `delta0`-subset drawn from a stream
/// keyed by `(seed, user_id)`, so the choice does not depend on other users.
pub fn cap_user_set(w: &ItemSet, delta0: usize, user_id: &str, seed: u64) -> ItemSet {
    if w.len() <= delta0 {
        return w.clone();
    }
    let mut rng = sub_stream(seed, CAP_DOMAIN, user_id.as_bytes());
    let items: Vec<&String> = w.iter().collect();
    index::sample(&mut rng, items.len(), delta0)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

/// One user's contribution as seen by [`build_histogram_traced`]: the capped
/// set plus each item's weight right before and after the update.
#[derive(Debug, Clone)]
pub struct UpdateStep<'a> {
    pub user_id: &'a str,
    pub pass: u32,
    pub items: &'a ItemSet,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Builds the weighted histogram for `db`.
///
/// With `passes > 1` the hash order is replayed `passes` times and each
/// update runs with `policy.budget / passes`.
pub fn build_histogram(
    db: &Database,
    config: &MechanismConfig,
    policy: &UpdatePolicy,
) -> Result<WeightedHistogram> {
    let order = order_users(db, config.seed);
    build_in_order(WeightedHistogram::new(), order.users(), config, policy, None)
}

/// [`build_histogram`] that reports every update to `observer`.
pub fn build_histogram_traced(
    db: &Database,
    config: &MechanismConfig,
    policy: &UpdatePolicy,
    mut observer: impl FnMut(UpdateStep<'_>),
) -> Result<WeightedHistogram> {
    let order = order_users(db, config.seed);
    build_in_order(WeightedHistogram::new(), order.users(), config, policy, Some(&mut observer))
}

/// Continues `initial` over an explicit user order, bypassing the hash.
///
/// Only the sensitivity lab uses this, to pin the permutation for
/// order-specific constructions.
pub(crate) fn build_forced_order(
    initial: WeightedHistogram,
    users: &[&UserRecord],
    config: &MechanismConfig,
    policy: &UpdatePolicy,
) -> Result<WeightedHistogram> {
    build_in_order(initial, users, config, policy, None)
}

fn build_in_order(
    mut hist: WeightedHistogram,
    users: &[&UserRecord],
    config: &MechanismConfig,
    policy: &UpdatePolicy,
    mut observer: Option<&mut dyn FnMut(UpdateStep<'_>)>,
) -> Result<WeightedHistogram> {
    config.validate()?;
    policy.validate()?;
    let per_pass = policy.with_budget(policy.budget / config.passes as f64);
    let capped: Vec<ItemSet> = users
        .iter()
        .map(|u| cap_user_set(&u.items, config.delta0, &u.user_id, config.seed))
        .collect();
    for pass in 0..config.passes {
        for (user, items) in users.iter().zip(&capped) {
            match observer.as_deref_mut() {
                None => per_pass.apply(&mut hist, items)?,
                Some(obs) => {
                    let before: Vec<f64> = items.iter().map(|u| hist.get(u)).collect();
                    per_pass.apply(&mut hist, items)?;
                    let after: Vec<f64> = items.iter().map(|u| hist.get(u)).collect();
                    obs(UpdateStep {
                        user_id: &user.user_id,
                        pass,
                        items,
                        before,
                        after,
                    });
                }
            }
        }
    }
    Ok(hist)
}
