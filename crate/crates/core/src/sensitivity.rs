//! Empirical checks of the sensitivity bound and of the contraction
//! properties of the update policies, plus the greedy blow-up construction.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::calibrate;
use crate::error::{DpsuError, Result};
use crate::histogram::{build_forced_order, build_histogram};
use crate::model::{
    dominates_within, lp_distance, Database, Item, ItemSet, MechanismConfig, Norm, PrivacyParams,
    UserRecord, WeightedHistogram, EPS_BUDGET,
};
use crate::policies::{PolicyKind, UpdatePolicy};
use crate::release::policy_for;
use crate::streams::sub_stream;

/// Histograms of a database with and without one user, built under the same
/// seed so the remaining users keep their relative order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborDiff {
    pub removed_user: String,
    pub h_full: WeightedHistogram,
    pub h_minus: WeightedHistogram,
    /// T = supp(h_full) \ supp(h_minus).
    pub new_items: ItemSet,
    /// ℓp distance over the union of both supports.
    pub lp_gap: f64,
    /// ℓp distance over supp(h_minus) only.
    pub restricted_gap: f64,
}

impl NeighborDiff {
    fn new(removed_user: &str, h_full: WeightedHistogram, h_minus: WeightedHistogram, p: Norm) -> Self {
        let new_items = h_full.support().filter(|u| !h_minus.contains(u)).cloned().collect();
        let lp_gap = lp_distance(&h_full, &h_minus, p);
        let restricted_gap = lp_distance(&h_full.restricted_to(&h_minus), &h_minus, p);
        NeighborDiff {
            removed_user: removed_user.to_owned(),
            h_full,
            h_minus,
            new_items,
            lp_gap,
            restricted_gap,
        }
    }

    /// `max_{u ∈ T} h_full[u] − lead(|T|)` with lead 1/|T| (ℓ1) or 1/√|T|
    /// (ℓ2); at most zero when the new-item bound holds. `None` if T is empty.
    pub fn new_item_excess(&self, p: Norm) -> Option<f64> {
        if self.new_items.is_empty() {
            return None;
        }
        let t = self.new_items.len() as f64;
        let lead = match p {
            Norm::L1 => 1.0 / t,
            Norm::L2 => 1.0 / t.sqrt(),
        };
        let peak = self
            .new_items
            .iter()
            .map(|u| self.h_full.get(u))
            .fold(0.0, f64::max);
        Some(peak - lead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeletionMode {
    AllUsers,
    /// `k` users drawn without replacement from a stream keyed by the seed.
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub norm: Norm,
    pub deletions: usize,
    /// Largest ℓp gap over all deletions (full union of supports).
    pub max_gap: f64,
    /// Largest gap restricted to supp(h_minus).
    pub max_restricted_gap: f64,
    /// Largest new-item excess (see [`NeighborDiff::new_item_excess`]);
    /// `None` when no deletion produced new items.
    pub max_new_item_excess: Option<f64>,
    /// The deletion attaining `max_gap`.
    pub worst: NeighborDiff,
    /// Deletions whose new-item excess exceeds `EPS_BUDGET`.
    pub new_item_violations: usize,
}

impl SensitivityReport {
    pub fn within_bound(&self, tol: f64) -> bool {
        self.max_gap <= 1.0 + tol
    }
}

/// Rebuilds the histogram once per deleted user and reports the largest
/// neighbouring distance in norm `p`.
pub fn empirical_sensitivity(
    db: &Database,
    config: &MechanismConfig,
    policy: &UpdatePolicy,
    p: Norm,
    mode: DeletionMode,
) -> Result<SensitivityReport> {
    empirical_sensitivity_with(db, config, policy, p, mode, |_| {})
}

/// [`empirical_sensitivity`] that also hands every [`NeighborDiff`] to
/// `inspect`, in deletion order.
pub fn empirical_sensitivity_with(
    db: &Database,
    config: &MechanismConfig,
    policy: &UpdatePolicy,
    p: Norm,
    mode: DeletionMode,
    mut inspect: impl FnMut(&NeighborDiff),
) -> Result<SensitivityReport> {
    if db.len() < 2 {
        return Err(DpsuError::invalid("sensitivity needs a database with at least 2 users"));
    }
    let h_full = build_histogram(db, config, policy)?;
    let users = db.users();
    let chosen: Vec<usize> = match mode {
        DeletionMode::AllUsers => (0..users.len()).collect(),
        DeletionMode::Sampled(k) => {
            let mut rng = sub_stream(config.seed, "deletions", b"");
            let mut picked = index::sample(&mut rng, users.len(), k.min(users.len())).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    let mut diffs: Vec<NeighborDiff> = chosen
        .par_iter()
        .map(|&i| {
            let id = &users[i].user_id;
            let h_minus = build_histogram(&db.without_user(id), config, policy)?;
            Ok(NeighborDiff::new(id, h_full.clone(), h_minus, p))
        })
        .collect::<Result<_>>()?;

    let mut worst = 0;
    let mut max_restricted_gap = 0.0f64;
    let mut max_new_item_excess: Option<f64> = None;
    let mut new_item_violations = 0;
    for (k, diff) in diffs.iter().enumerate() {
        inspect(diff);
        if diff.lp_gap > diffs[worst].lp_gap {
            worst = k;
        }
        max_restricted_gap = max_restricted_gap.max(diff.restricted_gap);
        if let Some(excess) = diff.new_item_excess(p) {
            max_new_item_excess = Some(max_new_item_excess.map_or(excess, |m| m.max(excess)));
            new_item_violations += usize::from(excess > EPS_BUDGET);
        }
    }
    Ok(SensitivityReport {
        norm: p,
        deletions: diffs.len(),
        max_gap: diffs[worst].lp_gap,
        max_restricted_gap,
        max_new_item_excess,
        worst: diffs.swap_remove(worst),
        new_item_violations,
    })
}

/// [`empirical_sensitivity`] for a private mechanism: calibrates, builds its
/// policy and measures in the mechanism's norm.
pub fn mechanism_sensitivity(
    db: &Database,
    config: &MechanismConfig,
    params: &PrivacyParams,
    mode: DeletionMode,
) -> Result<SensitivityReport> {
    let calibration = calibrate(config.mechanism, params, config.delta0, config.alpha)?;
    let policy = policy_for(config.mechanism, &calibration, config.delta0);
    empirical_sensitivity(db, config, &policy, config.mechanism.norm(), mode)
}

/// One contraction trial: a pair of histograms in the invariant set, a user
/// set, and both images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub policy: PolicyKind,
    pub norm: Norm,
    pub gamma: f64,
    pub h1: WeightedHistogram,
    pub h2: WeightedHistogram,
    pub w: ItemSet,
    pub image1: WeightedHistogram,
    pub image2: WeightedHistogram,
    pub gap_before: f64,
    pub gap_after: f64,
    /// The image pair is still in the invariant set.
    pub holds: bool,
}

/// Invariant set for norm `p`: ℓp distance at most 1, and for ℓ1 also
/// pointwise dominance `h1 ≥ h2`.
pub fn in_invariant_set(h1: &WeightedHistogram, h2: &WeightedHistogram, p: Norm) -> bool {
    let close = lp_distance(h1, h2, p) <= 1.0 + EPS_BUDGET;
    match p {
        Norm::L1 => close && dominates_within(h1, h2, EPS_BUDGET),
        Norm::L2 => close,
    }
}

const TRIAL_POOL: usize = 10;
const TRIAL_FRESH: usize = 2;

/// Applies `policy` to both histograms with the same `w` and checks the
/// images against the invariant set.
pub fn contraction_trial_on(
    policy: &UpdatePolicy,
    p: Norm,
    h1: WeightedHistogram,
    h2: WeightedHistogram,
    w: ItemSet,
    seed: u64,
) -> Result<TrialOutcome> {
    let image1 = policy.applied(&h1, &w)?;
    let image2 = policy.applied(&h2, &w)?;
    Ok(TrialOutcome {
        seed,
        policy: policy.kind,
        norm: p,
        gamma: policy.gamma,
        gap_before: lp_distance(&h1, &h2, p),
        gap_after: lp_distance(&image1, &image2, p),
        holds: in_invariant_set(&image1, &image2, p),
        h1,
        h2,
        w,
        image1,
        image2,
    })
}

/// Random pair in the invariant set for norm `p`.
///
/// `h2` has up to 10 items with weights uniform in [0, Γ]. The difference is
/// a direction on the ℓp unit sphere (non-negative for ℓ1) scaled by U[0, 1];
/// `h1 = clamp(h2 + d, 0, Γ)`, which can only shrink the distance.
fn random_pair(rng: &mut impl Rng, p: Norm, gamma: f64) -> (WeightedHistogram, WeightedHistogram) {
    let k = rng.random_range(1..=TRIAL_POOL);
    let items: Vec<Item> = (0..k).map(|j| format!("i{j}")).collect();
    let base: Vec<f64> = items.iter().map(|_| rng.random_range(0.0..=gamma)).collect();
    let dir: Vec<f64> = match p {
        Norm::L1 => {
            let e: Vec<f64> = (0..k).map(|_| rng.sample(Exp1)).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
        Norm::L2 => {
            let g: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let s = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.into_iter().map(|x| x / s).collect()
        }
    };
    let r: f64 = rng.random();
    let h2 = WeightedHistogram::from_pairs(items.iter().cloned().zip(base.iter().copied()));
    let h1 = WeightedHistogram::from_pairs(
        items
            .iter()
            .cloned()
            .zip(base.iter().zip(&dir).map(|(b, d)| (b + r * d).clamp(0.0, gamma))),
    );
    (h1, h2)
}

/// Random non-empty user set over the trial pool plus a couple of fresh items.
fn random_user_set(rng: &mut impl Rng) -> ItemSet {
    let universe = TRIAL_POOL + TRIAL_FRESH;
    let size = rng.random_range(1..=universe);
    index::sample(rng, universe, size)
        .into_iter()
        .map(|j| if j < TRIAL_POOL { format!("i{j}") } else { format!("fresh{}", j - TRIAL_POOL) })
        .collect()
}

/// Random contraction trial for `kind`, measured in norm `p`; Γ is drawn
/// uniformly from [1, 10].
pub fn contraction_trial(kind: PolicyKind, p: Norm, seed: u64) -> Result<TrialOutcome> {
    let mut rng = sub_stream(seed, "contraction", kind.name().as_bytes());
    let gamma = rng.random_range(1.0..=10.0);
    let (h1, h2) = random_pair(&mut rng, p, gamma);
    let w = random_user_set(&mut rng);
    let policy = UpdatePolicy::of_kind(kind, gamma, TRIAL_POOL + TRIAL_FRESH);
    contraction_trial_on(&policy, p, h1, h2, w, seed)
}

/// The two-item configuration on which greedy expands: `h1 = {u1: x+1,
/// u2: y}`, `h2 = {u1: x, u2: y}` with `x < y < x + 1` and `w = {u1, u2}`.
pub fn greedy_local_trial(x: f64, y: f64, gamma: f64) -> Result<TrialOutcome> {
    if !(0.0 <= x && x < y && y < x + 1.0) {
        return Err(DpsuError::invalid(format!("need 0 <= x < y < x + 1, got x = {x}, y = {y}")));
    }
    if gamma <= x + 2.0 || gamma <= y + 1.0 {
        return Err(DpsuError::invalid("gamma must leave room for a full unit on either item"));
    }
    let h1 = WeightedHistogram::from_pairs([("u1", x + 1.0), ("u2", y)]);
    let h2 = WeightedHistogram::from_pairs([("u1", x), ("u2", y)]);
    let w: ItemSet = ["u1", "u2"].iter().map(|s| s.to_string()).collect();
    contraction_trial_on(&UpdatePolicy::greedy(gamma), Norm::L1, h1, h2, w, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub policy: PolicyKind,
    pub norm: Norm,
    pub trials: usize,
    pub passed: usize,
    pub failed: usize,
    /// Largest post-update distance over all trials.
    pub worst_gap: f64,
    /// The trial attaining `worst_gap`, or the first failing one if any failed.
    pub worst_trace: Option<TrialOutcome>,
}

/// Runs `trials` random contraction trials with seeds `seed..seed + trials`
/// in the policy's own norm.
pub fn run_audit(kind: PolicyKind, trials: usize, seed: u64) -> Result<AuditVerdict> {
    let p = kind.norm();
    let outcomes: Vec<TrialOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|t| contraction_trial(kind, p, seed.wrapping_add(t)))
        .collect::<Result<_>>()?;
    let passed = outcomes.iter().filter(|o| o.holds).count();
    let worst_gap = outcomes.iter().map(|o| o.gap_after).fold(0.0, f64::max);
    let worst_trace = outcomes
        .iter()
        .find(|o| !o.holds)
        .or_else(|| outcomes.iter().find(|o| o.gap_after == worst_gap))
        .cloned();
    Ok(AuditVerdict {
        policy: kind,
        norm: p,
        trials,
        passed,
        failed: trials - passed,
        worst_gap,
        worst_trace,
    })
}

/// Builds the greedy blow-up database and returns the ℓ1 distance between
/// the histograms with and without user `i`.
///
/// A prelude user spends a weighted-ℓ1 unit on `{u2, pad}`, leaving
/// `u1 = 0 < u2 = 1/2 < 1`. Users `1..i` hold private filler items, user `i`
/// holds `{u1}` and users `i+1..=n` hold `{u1, u2}`; everything after the
/// prelude runs greedy with Δ0 = 2 in exactly this order. With user `i`,
/// `u1` has the smaller gap and every follower piles onto it; without, every
/// follower piles onto `u2`.
pub fn greedy_counterexample(n: usize, i: usize, gamma: f64) -> Result<(f64, NeighborDiff)> {
    if !(1 <= i && i <= n) {
        return Err(DpsuError::invalid(format!("need 1 <= i <= n, got i = {i}, n = {n}")));
    }
    if !(gamma.is_finite() && gamma > n as f64 + 2.0) {
        return Err(DpsuError::invalid(format!(
            "gamma must exceed n + 2 = {} so no weight saturates, got {gamma}",
            n + 2
        )));
    }
    let mut prelude = WeightedHistogram::new();
    let seed_set: ItemSet = ["u2", "pad"].iter().map(|s| s.to_string()).collect();
    UpdatePolicy::weighted(Norm::L1).apply(&mut prelude, &seed_set)?;

    let users: Vec<UserRecord> = (1..=n)
        .map(|k| {
            let id = format!("user{k:04}");
            if k < i {
                UserRecord::new(id, [format!("filler{k}")])
            } else if k == i {
                UserRecord::new(id, ["u1"])
            } else {
                UserRecord::new(id, ["u1", "u2"])
            }
        })
        .collect();
    let config = MechanismConfig::new(crate::model::Mechanism::GreedyDemo, 2, 0.0, 0);
    let policy = UpdatePolicy::greedy(gamma);

    let full: Vec<&UserRecord> = users.iter().collect();
    let minus: Vec<&UserRecord> = users.iter().filter(|u| u.user_id != users[i - 1].user_id).collect();
    let h_full = build_forced_order(prelude.clone(), &full, &config, &policy)?;
    let h_minus = build_forced_order(prelude, &minus, &config, &policy)?;
    let diff = NeighborDiff::new(&users[i - 1].user_id, h_full, h_minus, Norm::L1);
    Ok((diff.lp_gap, diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mechanism;

    #[test]
    fn two_identical_users() {
        let db = Database::from_sets([("a", ["x"]), ("b", ["x"])]).unwrap();
        let config = MechanismConfig::new(Mechanism::PolicyLaplace, 1, 0.0, 3);
        let r = empirical_sensitivity(&db, &config, &UpdatePolicy::l1_descent(10.0), Norm::L1, DeletionMode::AllUsers)
            .unwrap();
        assert_eq!(r.max_gap, 1.0);
        assert_eq!(r.deletions, 2);
        assert_eq!(r.max_new_item_excess, None);
    }

    #[test]
    fn needs_two_users() {
        let db = Database::from_sets([("a", ["x"])]).unwrap();
        let config = MechanismConfig::new(Mechanism::PolicyLaplace, 1, 0.0, 3);
        assert!(empirical_sensitivity(&db, &config, &UpdatePolicy::l1_descent(1.0), Norm::L1, DeletionMode::AllUsers)
            .is_err());
    }

    #[test]
    fn sampled_deletions() {
        let db = Database::from_sets((0..20).map(|i| (format!("u{i}"), vec![format!("x{}", i % 3), "y".into()])))
            .unwrap();
        let config = MechanismConfig::new(Mechanism::PolicyGaussian, 2, 0.0, 3);
        let r = empirical_sensitivity(&db, &config, &UpdatePolicy::l2_descent(3.0), Norm::L2, DeletionMode::Sampled(5))
            .unwrap();
        assert_eq!(r.deletions, 5);
        assert!(r.within_bound(1e-9));
    }

    #[test]
    fn lone_item_is_a_new_item() {
        let db = Database::from_sets([("a", vec!["x", "y"]), ("b", vec!["x"])]).unwrap();
        let config = MechanismConfig::new(Mechanism::PolicyLaplace, 2, 0.0, 3);
        let mut seen = Vec::new();
        empirical_sensitivity_with(
            &db,
            &config,
            &UpdatePolicy::l1_descent(10.0),
            Norm::L1,
            DeletionMode::AllUsers,
            |d| seen.push((d.removed_user.clone(), d.new_items.clone())),
        )
        .unwrap();
        let a = seen.iter().find(|(u, _)| u == "a").unwrap();
        assert_eq!(a.1, ["y".to_string()].into_iter().collect());
    }

    #[test]
    fn identical_pair_stays_identical() {
        let h = WeightedHistogram::from_pairs([("i0", 2.0), ("i3", 0.5)]);
        let w: ItemSet = ["i0", "i1", "i3"].iter().map(|s| s.to_string()).collect();
        for kind in [PolicyKind::L1Descent, PolicyKind::L2Descent, PolicyKind::Greedy] {
            let policy = UpdatePolicy::of_kind(kind, 3.0, 3);
            let o = contraction_trial_on(&policy, kind.norm(), h.clone(), h.clone(), w.clone(), 0).unwrap();
            assert!(o.holds);
            assert_eq!(o.image1, o.image2);
        }
    }

    #[test]
    fn random_pairs_start_in_the_invariant_set() {
        for seed in 0..500 {
            for kind in [PolicyKind::L1Descent, PolicyKind::L2Descent] {
                let o = contraction_trial(kind, kind.norm(), seed).unwrap();
                assert!(in_invariant_set(&o.h1, &o.h2, o.norm), "seed {seed}");
                assert!(o.gap_before <= 1.0 + EPS_BUDGET);
            }
        }
    }

    #[test]
    fn descent_audits_pass() {
        for kind in [PolicyKind::L1Descent, PolicyKind::L2Descent] {
            let v = run_audit(kind, 2000, 17).unwrap();
            assert_eq!(v.failed, 0, "{kind}: {:?}", v.worst_trace);
            assert!(v.worst_gap <= 1.0 + EPS_BUDGET);
        }
    }

    #[test]
    fn audit_is_deterministic() {
        let a = run_audit(PolicyKind::Greedy, 300, 5).unwrap();
        let b = run_audit(PolicyKind::Greedy, 300, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_local_configuration_expands() {
        let o = greedy_local_trial(1.0, 1.5, 20.0).unwrap();
        // h1 -> {u1: 3, u2: 1.5}, h2 -> {u1: 1, u2: 2.5}
        assert_eq!(o.image1, WeightedHistogram::from_pairs([("u1", 3.0), ("u2", 1.5)]));
        assert_eq!(o.image2, WeightedHistogram::from_pairs([("u1", 1.0), ("u2", 2.5)]));
        assert_eq!(o.gap_after, 3.0);
        assert!(!o.holds);
        assert!(greedy_local_trial(1.0, 2.5, 20.0).is_err());
    }

    #[test]
    fn counterexample_values() {
        assert_eq!(greedy_counterexample(10, 5, 100.0).unwrap().0, 11.0);
        assert_eq!(greedy_counterexample(7, 7, 100.0).unwrap().0, 1.0);
        let gaps: Vec<f64> = [6, 8, 10, 12]
            .iter()
            .map(|&n| greedy_counterexample(n, 3, 100.0).unwrap().0)
            .collect();
        assert_eq!(gaps, vec![7.0, 11.0, 15.0, 19.0]);
        assert!(greedy_counterexample(10, 5, 12.0).is_err());
        assert!(greedy_counterexample(10, 0, 100.0).is_err());
        assert!(greedy_counterexample(10, 11, 100.0).is_err());
    }

    #[test]
    fn counterexample_trace() {
        let (_, diff) = greedy_counterexample(10, 5, 100.0).unwrap();
        assert_eq!(diff.h_full.get("u1"), 6.0);
        assert_eq!(diff.h_full.get("u2"), 0.5);
        assert_eq!(diff.h_minus.get("u1"), 0.0);
        assert_eq!(diff.h_minus.get("u2"), 5.5);
        assert_eq!(diff.new_items, ["u1".to_string()].into_iter().collect());
    }

    #[test]
    fn mechanism_sensitivity_refuses_greedy() {
        let db = Database::from_sets([("a", ["x"]), ("b", ["x"])]).unwrap();
        let config = MechanismConfig::new(Mechanism::GreedyDemo, 1, 1.0, 0);
        let params = PrivacyParams::new(1.0, 1e-6).unwrap();
        assert!(matches!(
            mechanism_sensitivity(&db, &config, &params, DeletionMode::AllUsers),
            Err(DpsuError::Refused(_))
        ));
    }
}
