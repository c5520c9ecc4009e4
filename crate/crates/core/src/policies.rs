//! Update policies: how one user's (capped) item set adds weight to the
//! histogram. Every policy only touches items of the user's set and spends at
//! most `budget` of ℓ1 or ℓ2 mass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};
use crate::model::{Item, ItemSet, Mechanism, Norm, WeightedHistogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    CountL1,
    CountL2,
    WeightedL1,
    WeightedL2,
    L1Descent,
    L2Descent,
    Greedy,
}

impl PolicyKind {
    pub fn for_mechanism(mechanism: Mechanism) -> PolicyKind {
        match mechanism {
            Mechanism::CountLaplace => PolicyKind::CountL1,
            Mechanism::CountGaussian => PolicyKind::CountL2,
            Mechanism::WeightedLaplace => PolicyKind::WeightedL1,
            Mechanism::WeightedGaussian => PolicyKind::WeightedL2,
            Mechanism::PolicyLaplace => PolicyKind::L1Descent,
            Mechanism::PolicyGaussian => PolicyKind::L2Descent,
            Mechanism::GreedyDemo => PolicyKind::Greedy,
        }
    }

    /// Norm in which this policy's per-user budget is measured.
    pub fn norm(self) -> Norm {
        match self {
            PolicyKind::CountL1 | PolicyKind::WeightedL1 | PolicyKind::L1Descent | PolicyKind::Greedy => {
                Norm::L1
            }
            PolicyKind::CountL2 | PolicyKind::WeightedL2 | PolicyKind::L2Descent => Norm::L2,
        }
    }

    pub fn uses_cutoff(self) -> bool {
        matches!(
            self,
            PolicyKind::L1Descent | PolicyKind::L2Descent | PolicyKind::Greedy
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::CountL1 => "count-l1",
            PolicyKind::CountL2 => "count-l2",
            PolicyKind::WeightedL1 => "weighted-l1",
            PolicyKind::WeightedL2 => "weighted-l2",
            PolicyKind::L1Descent => "l1-descent",
            PolicyKind::L2Descent => "l2-descent",
            PolicyKind::Greedy => "greedy",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = DpsuError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        [
            PolicyKind::CountL1,
            PolicyKind::CountL2,
            PolicyKind::WeightedL1,
            PolicyKind::WeightedL2,
            PolicyKind::L1Descent,
            PolicyKind::L2Descent,
            PolicyKind::Greedy,
        ]
        .into_iter()
        .find(|k| k.name() == norm)
        .ok_or_else(|| DpsuError::invalid(format!("unknown policy `{s}`")))
    }
}

/// A configured update policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub kind: PolicyKind,
    /// Cutoff Γ; only read by the descent and greedy policies.
    pub gamma: f64,
    /// Only read by the count policies.
    pub delta0: usize,
    /// Per-update budget in (0, 1]; below 1 only in multi-pass mode.
    pub budget: f64,
}

impl UpdatePolicy {
    pub fn count(norm: Norm, delta0: usize) -> Self {
        let kind = match norm {
            Norm::L1 => PolicyKind::CountL1,
            Norm::L2 => PolicyKind::CountL2,
        };
        UpdatePolicy { kind, gamma: f64::INFINITY, delta0, budget: 1.0 }
    }

    pub fn weighted(norm: Norm) -> Self {
        let kind = match norm {
            Norm::L1 => PolicyKind::WeightedL1,
            Norm::L2 => PolicyKind::WeightedL2,
        };
        UpdatePolicy { kind, gamma: f64::INFINITY, delta0: 1, budget: 1.0 }
    }

    pub fn l1_descent(gamma: f64) -> Self {
        UpdatePolicy { kind: PolicyKind::L1Descent, gamma, delta0: 1, budget: 1.0 }
    }

    pub fn l2_descent(gamma: f64) -> Self {
        UpdatePolicy { kind: PolicyKind::L2Descent, gamma, delta0: 1, budget: 1.0 }
    }

    pub fn greedy(gamma: f64) -> Self {
        UpdatePolicy { kind: PolicyKind::Greedy, gamma, delta0: 1, budget: 1.0 }
    }

    /// Generic constructor; fields a kind does not read are ignored.
    pub fn of_kind(kind: PolicyKind, gamma: f64, delta0: usize) -> Self {
        UpdatePolicy { kind, gamma, delta0, budget: 1.0 }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    pub fn norm(&self) -> Norm {
        self.kind.norm()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(DpsuError::invalid(format!(
                "policy budget must lie in (0, 1], got {}",
                self.budget
            )));
        }
        if self.kind.uses_cutoff() && !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(DpsuError::invalid(format!(
                "{} needs a finite cutoff > 0, got {}",
                self.kind, self.gamma
            )));
        }
        if matches!(self.kind, PolicyKind::CountL1 | PolicyKind::CountL2) && self.delta0 < 1 {
            return Err(DpsuError::invalid("delta0 must be at least 1"));
        }
        Ok(())
    }

    /// Applies one user's update in place.
    pub fn apply(&self, h: &mut WeightedHistogram, w: &ItemSet) -> Result<()> {
        match self.kind {
            PolicyKind::CountL1 => count_update(h, w, self.delta0, Norm::L1, self.budget)?,
            PolicyKind::CountL2 => count_update(h, w, self.delta0, Norm::L2, self.budget)?,
            PolicyKind::WeightedL1 => weighted_update(h, w, Norm::L1, self.budget),
            PolicyKind::WeightedL2 => weighted_update(h, w, Norm::L2, self.budget),
            PolicyKind::L1Descent => l1_descent_update(h, w, self.gamma, self.budget),
            PolicyKind::L2Descent => l2_descent_update(h, w, self.gamma, self.budget),
            PolicyKind::Greedy => greedy_update(h, w, self.gamma, self.budget),
        }
        Ok(())
    }

    /// Pure form of [`UpdatePolicy::apply`].
    pub fn applied(&self, h: &WeightedHistogram, w: &ItemSet) -> Result<WeightedHistogram> {
        let mut out = h.clone();
        self.apply(&mut out, w)?;
        Ok(out)
    }
}

/// Items of `w` strictly below the cutoff with their gaps, sorted by
/// `(gap, item)` ascending.
fn sorted_gaps<'a>(h: &WeightedHistogram, w: &'a ItemSet, gamma: f64) -> Vec<(f64, &'a Item)> {
    let mut gaps: Vec<(f64, &Item)> = w
        .iter()
        .filter_map(|u| {
            let gap = gamma - h.get(u);
            (gap > 0.0).then_some((gap, u))
        })
        .collect();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    gaps
}

/// ℓ1-descent (water-filling).
///
/// All items of `w` below `gamma` are raised at the same rate. An item that
/// reaches `gamma` is frozen there and the rest keep rising, until `budget`
/// is spent or every item sits at the cutoff.
pub fn l1_descent_update(h: &mut WeightedHistogram, w: &ItemSet, gamma: f64, budget: f64) {
    let gaps = sorted_gaps(h, w, gamma);
    let mut remaining = budget;
    let mut level = 0.0;
    let mut active = gaps.len();
    let mut frozen = 0;
    for &(gap, _) in &gaps {
        let cost = (gap - level) * active as f64;
        if cost <= remaining {
            remaining -= cost;
            level = gap;
            active -= 1;
            frozen += 1;
        } else {
            // the remaining budget is shared by all `active` items, then stop
            level += remaining / active as f64;
            break;
        }
    }
    for (idx, &(_, item)) in gaps.iter().enumerate() {
        if idx < frozen {
            h.set(item.clone(), gamma);
        } else {
            let raised = (h.get(item) + level).min(gamma);
            h.set(item.clone(), raised);
        }
    }
}

/// ℓ2-descent: move `H|w` towards `(Γ, …, Γ)` by ℓ2 distance `budget`, or
/// onto it when it is closer than that.
///
/// Gaps of items already above the cutoff are clamped to zero, so the update
/// never lowers a weight.
pub fn l2_descent_update(h: &mut WeightedHistogram, w: &ItemSet, gamma: f64, budget: f64) {
    let gaps: Vec<(&Item, f64)> = w.iter().map(|u| (u, (gamma - h.get(u)).max(0.0))).collect();
    let z = gaps.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
    if z < budget {
        for (item, gap) in gaps {
            if gap > 0.0 {
                h.set(item.clone(), gamma);
            }
        }
    } else {
        let step = budget / z;
        for (item, gap) in gaps {
            if gap > 0.0 {
                let raised = (h.get(item) + step * gap).min(gamma);
                h.set(item.clone(), raised);
            }
        }
    }
}

/// Spreads the budget evenly: `budget/|w|` per item under ℓ1,
/// `budget/√|w|` under ℓ2.
pub fn weighted_update(h: &mut WeightedHistogram, w: &ItemSet, p: Norm, budget: f64) {
    if w.is_empty() {
        return;
    }
    let n = w.len() as f64;
    let amount = match p {
        Norm::L1 => budget / n,
        Norm::L2 => budget / n.sqrt(),
    };
    for item in w {
        h.add(item, amount);
    }
}

/// Count baseline, rescaled so one user has sensitivity at most one: each
/// item gains `budget/Δ0` (ℓ1) or `budget/√Δ0` (ℓ2) regardless of `|w|`.
pub fn count_update(
    h: &mut WeightedHistogram,
    w: &ItemSet,
    delta0: usize,
    p: Norm,
    budget: f64,
) -> Result<()> {
    if delta0 < 1 {
        return Err(DpsuError::invalid("delta0 must be at least 1"));
    }
    if w.len() > delta0 {
        return Err(DpsuError::invalid(format!(
            "count update got {} items but delta0 is {delta0}; cap the set first",
            w.len()
        )));
    }
    let d = delta0 as f64;
    let amount = match p {
        Norm::L1 => budget / d,
        Norm::L2 => budget / d.sqrt(),
    };
    for item in w {
        h.add(item, amount);
    }
    Ok(())
}

/// Greedy: fill the items closest to the cutoff first.
///
/// Not contractive; only used to demonstrate unbounded sensitivity.
pub fn greedy_update(h: &mut WeightedHistogram, w: &ItemSet, gamma: f64, budget: f64) {
    let gaps = sorted_gaps(h, w, gamma);
    let mut remaining = budget;
    for (gap, item) in gaps {
        if remaining <= 0.0 {
            break;
        }
        if gap <= remaining {
            h.set(item.clone(), gamma);
            remaining -= gap;
        } else {
            let raised = (h.get(item) + remaining).min(gamma);
            h.set(item.clone(), raised);
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dominates_within, lp_distance, EPS_BUDGET};
    use proptest::prelude::*;

    fn h(pairs: &[(&str, f64)]) -> WeightedHistogram {
        WeightedHistogram::from_pairs(pairs.iter().map(|(k, v)| (*k, *v)))
    }

    fn set(items: &[&str]) -> ItemSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn assert_hist(actual: &WeightedHistogram, expected: &[(&str, f64)]) {
        let expected = h(expected);
        assert!(
            lp_distance(actual, &expected, Norm::L1) <= 1e-12,
            "got {actual:?}, expected {expected:?}"
        );
    }

    #[test]
    fn l1_descent_single_item() {
        let mut hist = h(&[]);
        l1_descent_update(&mut hist, &set(&["a"]), 10.0, 1.0);
        assert_hist(&hist, &[("a", 1.0)]);
    }

    #[test]
    fn l1_descent_budget_runs_out_as_first_item_freezes() {
        let mut hist = h(&[("a", 4.5), ("b", 3.0)]);
        l1_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_eq!(hist.get("a"), 5.0);
        assert_hist(&hist, &[("a", 5.0), ("b", 3.5)]);
    }

    #[test]
    fn l1_descent_everything_reaches_cutoff() {
        let before = h(&[("a", 4.9), ("b", 4.9)]);
        let mut hist = before.clone();
        l1_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_eq!(hist.get("a"), 5.0);
        assert_eq!(hist.get("b"), 5.0);
        assert!((lp_distance(&hist, &before, Norm::L1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn l1_descent_spreads_remainder_over_all_active_items() {
        // gaps 0.2, 1, 1: first freeze costs 0.6, remaining 0.4 split across two
        let mut hist = h(&[("a", 4.8), ("b", 4.0), ("c", 4.0)]);
        l1_descent_update(&mut hist, &set(&["a", "b", "c"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0), ("b", 4.4), ("c", 4.4)]);
    }

    #[test]
    fn l1_descent_ignores_items_at_or_above_cutoff() {
        let mut hist = h(&[("a", 5.0), ("b", 7.0)]);
        l1_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0), ("b", 7.0)]);
    }

    #[test]
    fn l2_descent_examples() {
        let mut hist = h(&[("a", 4.7), ("b", 4.6)]);
        l2_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_eq!(hist.get("a"), 5.0);
        assert_eq!(hist.get("b"), 5.0);

        let mut hist = h(&[]);
        l2_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        let r = 1.0 / 2f64.sqrt();
        assert_hist(&hist, &[("a", r), ("b", r)]);

        let mut hist = h(&[("a", 5.0)]);
        l2_descent_update(&mut hist, &set(&["a"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0)]);
    }

    #[test]
    fn l2_descent_never_lowers_weights_above_cutoff() {
        let mut hist = h(&[("a", 9.0)]);
        l2_descent_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_eq!(hist.get("a"), 9.0);
        assert_hist(&hist, &[("a", 9.0), ("b", 1.0)]);
    }

    #[test]
    fn weighted_examples() {
        for p in [Norm::L1, Norm::L2] {
            let mut hist = h(&[]);
            weighted_update(&mut hist, &set(&["a"]), p, 1.0);
            assert_hist(&hist, &[("a", 1.0)]);
        }
        let mut hist = h(&[]);
        weighted_update(&mut hist, &set(&["a", "b", "c", "d"]), Norm::L1, 1.0);
        assert_hist(&hist, &[("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)]);
        let mut hist = h(&[]);
        weighted_update(&mut hist, &set(&["a", "b", "c", "d"]), Norm::L2, 1.0);
        assert_hist(&hist, &[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5)]);
    }

    #[test]
    fn count_examples() {
        let mut hist = h(&[]);
        count_update(&mut hist, &set(&["a"]), 1, Norm::L1, 1.0).unwrap();
        assert_hist(&hist, &[("a", 1.0)]);

        let mut hist = h(&[]);
        count_update(&mut hist, &set(&["a", "b"]), 4, Norm::L1, 1.0).unwrap();
        assert_hist(&hist, &[("a", 0.25), ("b", 0.25)]);
        assert!((hist.total_weight() - 0.5).abs() < 1e-15);

        let mut hist = h(&[]);
        count_update(&mut hist, &set(&["a", "b", "c", "d"]), 4, Norm::L2, 1.0).unwrap();
        assert_hist(&hist, &[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5)]);
        assert!((lp_distance(&hist, &h(&[]), Norm::L2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn count_rejects_uncapped_sets() {
        let mut hist = h(&[]);
        let err = count_update(&mut hist, &set(&["a", "b"]), 1, Norm::L1, 1.0);
        assert!(matches!(err, Err(DpsuError::InvalidParameter(_))));
        assert!(hist.is_empty());
    }

    #[test]
    fn greedy_examples() {
        let mut hist = h(&[("a", 4.0), ("b", 1.0)]);
        greedy_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0), ("b", 1.0)]);

        let mut hist = h(&[("a", 4.5), ("b", 1.0)]);
        greedy_update(&mut hist, &set(&["a", "b"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0), ("b", 1.5)]);

        let mut hist = h(&[("a", 5.0)]);
        greedy_update(&mut hist, &set(&["a"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 5.0)]);
    }

    #[test]
    fn greedy_breaks_gap_ties_by_item_id() {
        let mut hist = h(&[]);
        greedy_update(&mut hist, &set(&["b", "a"]), 5.0, 1.0);
        assert_hist(&hist, &[("a", 1.0)]);
    }

    #[test]
    fn policies_agree_at_the_floor() {
        // Δ0 = 1 and the item is at least one below the cutoff: all add exactly 1
        for start in [0.0, 0.5, 3.0, 4.0] {
            let base = h(&[("a", start), ("z", 2.0)]);
            let w = set(&["a"]);
            let mut count = base.clone();
            count_update(&mut count, &w, 1, Norm::L1, 1.0).unwrap();
            let mut weighted = base.clone();
            weighted_update(&mut weighted, &w, Norm::L1, 1.0);
            let mut descent = base.clone();
            l1_descent_update(&mut descent, &w, 5.0, 1.0);
            assert_eq!(count, weighted);
            assert_eq!(count, descent);
            assert_eq!(count.get("a"), start + 1.0);
        }
    }

    #[test]
    fn validate_rejects_bad_budgets_and_cutoffs() {
        assert!(UpdatePolicy::l1_descent(5.0).with_budget(0.0).validate().is_err());
        assert!(UpdatePolicy::l1_descent(5.0).with_budget(1.5).validate().is_err());
        assert!(UpdatePolicy::l2_descent(0.0).validate().is_err());
        assert!(UpdatePolicy::weighted(Norm::L1).validate().is_ok());
        assert!(UpdatePolicy::l1_descent(5.0).with_budget(0.5).validate().is_ok());
    }

    const ALL_KINDS: [PolicyKind; 7] = [
        PolicyKind::CountL1,
        PolicyKind::CountL2,
        PolicyKind::WeightedL1,
        PolicyKind::WeightedL2,
        PolicyKind::L1Descent,
        PolicyKind::L2Descent,
        PolicyKind::Greedy,
    ];

    fn arb_case() -> impl Strategy<Value = (WeightedHistogram, ItemSet, f64, f64)> {
        let hist = proptest::collection::btree_map("[a-h]", 0.0f64..8.0, 0..8)
            .prop_map(|m| WeightedHistogram::from_pairs(m.into_iter()));
        let w = proptest::collection::btree_set("[a-j]", 1..6);
        (hist, w, 0.5f64..8.0, prop_oneof![Just(1.0), 0.05f64..1.0])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn every_policy_respects_support_budget_and_cutoff(
            (hist, w, gamma, budget) in arb_case()
        ) {
            for kind in ALL_KINDS {
                let policy = UpdatePolicy::of_kind(kind, gamma, w.len().max(1)).with_budget(budget);
                let after = policy.applied(&hist, &w).unwrap();
                // only items of w change, and never downwards
                for (item, v) in after.iter() {
                    if !w.contains(item) {
                        prop_assert_eq!(v, hist.get(item));
                    }
                    prop_assert!(v >= hist.get(item));
                }
                for (item, v) in hist.iter() {
                    prop_assert!(after.contains(item) || v == 0.0);
                }
                let moved = lp_distance(&after, &hist, kind.norm());
                prop_assert!(moved <= budget + EPS_BUDGET, "{kind} moved {moved} > {budget}");
                if kind.uses_cutoff() {
                    for item in &w {
                        let before = hist.get(item);
                        if before <= gamma {
                            prop_assert!(after.get(item) <= gamma);
                        } else {
                            prop_assert_eq!(after.get(item), before);
                        }
                    }
                }
            }
        }

        #[test]
        fn l1_descent_keeps_dominated_pairs_close(
            base in proptest::collection::btree_map("[a-h]", 0.0f64..6.0, 0..8),
            bump in proptest::collection::vec(0.0f64..1.0, 8),
            scale in 0.0f64..1.0,
            w in proptest::collection::btree_set("[a-j]", 1..6),
            gamma in 0.5f64..6.0,
        ) {
            let h2 = WeightedHistogram::from_pairs(base.iter().map(|(k, v)| (k.clone(), v.min(gamma))));
            // spread mass `scale` over the first items of h2 (plus one fresh item)
            let mut keys: Vec<String> = h2.support().cloned().collect();
            keys.push("i".into());
            let total: f64 = bump.iter().take(keys.len()).sum::<f64>().max(1e-9);
            let mut h1 = h2.clone();
            for (k, b) in keys.iter().zip(&bump) {
                let v = (h2.get(k) + scale * b / total).min(gamma);
                h1.set(k.clone(), v);
            }
            prop_assume!(lp_distance(&h1, &h2, Norm::L1) <= 1.0);
            let mut a = h1.clone();
            let mut b = h2.clone();
            l1_descent_update(&mut a, &w, gamma, 1.0);
            l1_descent_update(&mut b, &w, gamma, 1.0);
            prop_assert!(dominates_within(&a, &b, EPS_BUDGET));
            prop_assert!(lp_distance(&a, &b, Norm::L1) <= lp_distance(&h1, &h2, Norm::L1) + EPS_BUDGET);
        }

        #[test]
        fn l2_descent_is_non_expansive(
            pairs in proptest::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..9),
            scale in 0.0f64..1.0,
            w_mask in proptest::collection::vec(any::<bool>(), 10),
            gamma in 0.5f64..6.0,
        ) {
            let norm = pairs.iter().map(|(_, d)| d * d).sum::<f64>().sqrt().max(1e-12);
            let mut h1 = WeightedHistogram::new();
            let mut h2 = WeightedHistogram::new();
            for (i, (base, dir)) in pairs.iter().enumerate() {
                let key = format!("k{i}");
                let lo = base * gamma;
                h2.set(key.clone(), lo);
                h1.set(key, (lo + scale * dir / norm).clamp(0.0, gamma));
            }
            let w: ItemSet = w_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| format!("k{i}")).collect();
            prop_assume!(!w.is_empty());
            let before = lp_distance(&h1, &h2, Norm::L2);
            let mut a = h1.clone();
            let mut b = h2.clone();
            l2_descent_update(&mut a, &w, gamma, 1.0);
            l2_descent_update(&mut b, &w, gamma, 1.0);
            prop_assert!(lp_distance(&a, &b, Norm::L2) <= before + EPS_BUDGET);
        }
    }
}
