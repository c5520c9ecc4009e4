//! Noisy thresholding of a weighted histogram and the end-to-end pipelines.

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationResult};
use crate::error::{DpsuError, Result};
use crate::histogram::build_histogram;
use crate::model::{
    Database, ItemSet, Mechanism, MechanismConfig, NoiseFamily, PrivacyParams, WeightedHistogram,
};
use crate::policies::{PolicyKind, UpdatePolicy};
use crate::streams::sub_stream;

const NOISE_DOMAIN: &str = "noise";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Laplace,
    Gaussian,
    /// No noise. For tests and audits only; never part of a private run.
    None,
}

impl From<NoiseFamily> for NoiseKind {
    fn from(f: NoiseFamily) -> Self {
        match f {
            NoiseFamily::Laplace => NoiseKind::Laplace,
            NoiseFamily::Gaussian => NoiseKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// λ for Laplace, σ for Gaussian, ignored for `None`.
    pub scale: f64,
}

impl NoiseSpec {
    pub fn laplace(lambda: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Laplace, scale: lambda }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian, scale: sigma }
    }

    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::None, scale: 0.0 }
    }

    pub fn from_calibration(c: &CalibrationResult) -> Self {
        NoiseSpec { kind: c.noise_kind.into(), scale: c.scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != NoiseKind::None && !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(DpsuError::invalid(format!(
                "noise scale must be finite and >= 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// One noise draw for `item`, a pure function of `(seed, item)`.
///
/// Laplace draws use the inverse CDF of a uniform on the open unit interval.
/// This is ordinary floating-point sampling and makes no attempt to close
/// the known side channels of floating-point Laplace noise.
pub fn sample_noise(spec: &NoiseSpec, item: &str, seed: u64) -> f64 {
    match spec.kind {
        NoiseKind::None => 0.0,
        NoiseKind::Laplace => {
            let mut rng = sub_stream(seed, NOISE_DOMAIN, item.as_bytes());
            let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
            -spec.scale * u.signum() * (-2.0 * u.abs()).ln_1p()
        }
        NoiseKind::Gaussian => {
            let mut rng = sub_stream(seed, NOISE_DOMAIN, item.as_bytes());
            let z: f64 = rng.sample(StandardNormal);
            spec.scale * z
        }
    }
}

/// `{u ∈ supp(h) : h[u] + noise(u) > rho}`. Items are processed in parallel;
/// the result does not depend on scheduling.
pub fn release_set(h: &WeightedHistogram, spec: &NoiseSpec, rho: f64, seed: u64) -> ItemSet {
    let entries: Vec<(&String, f64)> = h.iter().collect();
    entries
        .par_iter()
        .filter(|(item, w)| w + sample_noise(spec, item, seed) > rho)
        .map(|(item, _)| (*item).clone())
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// The update policy a mechanism runs with, given its calibration.
pub fn policy_for(mechanism: Mechanism, calibration: &CalibrationResult, delta0: usize) -> UpdatePolicy {
    UpdatePolicy::of_kind(PolicyKind::for_mechanism(mechanism), calibration.gamma, delta0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseReport {
    pub released: ItemSet,
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    pub delta0: usize,
    pub alpha: f64,
    pub seed: u64,
    pub passes: u32,
    pub calibration: CalibrationResult,
    pub histogram_support_size: usize,
    pub released_size: usize,
    /// `true` iff the run carries the (ε, δ) guarantee.
    pub private: bool,
    pub caveats: Vec<String>,
}

/// Checks the parts of `config` that [`run_dpsu`] refuses outright.
pub fn check_runnable(config: &MechanismConfig) -> Result<()> {
    if config.mechanism == Mechanism::GreedyDemo {
        return Err(DpsuError::Refused(
            "greedy-demo has unbounded sensitivity; use the audit tools instead".into(),
        ));
    }
    config.validate()?;
    if config.passes > 1 && !config.experimental {
        return Err(DpsuError::Refused(format!(
            "passes = {} needs the experimental flag; multi-pass runs are not covered by the privacy analysis",
            config.passes
        )));
    }
    Ok(())
}

/// Calibrate, build the histogram under the mechanism's policy, add noise and
/// threshold.
pub fn run_dpsu(db: &Database, config: &MechanismConfig, params: &PrivacyParams) -> Result<ReleaseReport> {
    check_runnable(config)?;
    params.validate()?;
    let calibration = calibrate(config.mechanism, params, config.delta0, config.alpha)?;
    let policy = policy_for(config.mechanism, &calibration, config.delta0);
    let hist = build_histogram(db, config, &policy)?;
    let released = release_set(&hist, &NoiseSpec::from_calibration(&calibration), calibration.rho, config.seed);

    let mut caveats = vec!["floating-point noise sampling; not hardened against side channels".to_string()];
    if config.passes > 1 {
        caveats.push(format!(
            "experimental {}-pass run: no privacy guarantee",
            config.passes
        ));
    }
    Ok(ReleaseReport {
        released_size: released.len(),
        released,
        mechanism: config.mechanism,
        epsilon: params.epsilon,
        delta: params.delta,
        delta0: config.delta0,
        alpha: config.alpha,
        seed: config.seed,
        passes: config.passes,
        calibration,
        histogram_support_size: hist.len(),
        private: config.passes == 1,
        caveats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::normal_cdf;

    fn e10() -> PrivacyParams {
        PrivacyParams::new(3.0, (-10.0f64).exp()).unwrap()
    }

    #[test]
    fn none_noise_is_zero() {
        for i in 0..20 {
            assert_eq!(sample_noise(&NoiseSpec::none(), &format!("x{i}"), i), 0.0);
        }
    }

    #[test]
    fn noise_is_deterministic_and_item_specific() {
        let spec = NoiseSpec::gaussian(1.0);
        assert_eq!(sample_noise(&spec, "a", 5), sample_noise(&spec, "a", 5));
        assert_ne!(sample_noise(&spec, "a", 5), sample_noise(&spec, "b", 5));
        assert_ne!(sample_noise(&spec, "a", 5), sample_noise(&spec, "a", 6));
    }

    #[test]
    fn laplace_moments() {
        let spec = NoiseSpec::laplace(1.0);
        let n = 1_000_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for seed in 0..n {
            let x = sample_noise(&spec, "item", seed);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((var - 2.0).abs() <= 0.05, "variance {var}");
    }

    #[test]
    fn gaussian_tail() {
        let spec = NoiseSpec::gaussian(2.0);
        let n = 1_000_000u64;
        let above = (0..n).filter(|&seed| sample_noise(&spec, "item", seed) > 2.0).count();
        let freq = above as f64 / n as f64;
        assert!((freq - normal_cdf(-1.0)).abs() <= 0.005, "{freq}");
    }

    #[test]
    fn release_examples() {
        let h = WeightedHistogram::from_pairs([("a", 3.0), ("b", 1.0)]);
        let s = release_set(&h, &NoiseSpec::none(), 2.0, 0);
        assert_eq!(s, ["a".to_string()].into_iter().collect());
        assert!(release_set(&WeightedHistogram::new(), &NoiseSpec::gaussian(1.0), 1.0, 0).is_empty());
    }

    #[test]
    fn far_above_threshold_is_released() {
        let sigma = 1.5;
        let rho = 4.0;
        let h = WeightedHistogram::from_pairs([("a", rho + 10.0 * sigma)]);
        let hits = (0..1000)
            .filter(|&seed| release_set(&h, &NoiseSpec::gaussian(sigma), rho, seed).contains("a"))
            .count();
        assert!(hits >= 999);
    }

    #[test]
    fn higher_threshold_releases_a_subset() {
        let h = WeightedHistogram::from_pairs((0..200).map(|i| (format!("i{i}"), i as f64 / 20.0)));
        let spec = NoiseSpec::laplace(1.0);
        for seed in 0..10 {
            let low = release_set(&h, &spec, 3.0, seed);
            let high = release_set(&h, &spec, 4.0, seed);
            assert!(high.is_subset(&low));
        }
    }

    #[test]
    fn empty_db() {
        let config = MechanismConfig::new(Mechanism::PolicyGaussian, 10, 5.0, 1);
        let r = run_dpsu(&Database::empty(), &config, &e10()).unwrap();
        assert!(r.released.is_empty());
        assert!(r.private);
    }

    #[test]
    fn saturated_item_is_released() {
        let db = Database::from_sets((0..1000).map(|i| (format!("u{i}"), ["a"]))).unwrap();
        let params = e10();
        let mut hits = 0;
        for seed in 0..1000 {
            let config = MechanismConfig::new(Mechanism::PolicyLaplace, 1, 5.0, seed);
            let calibration = calibrate(Mechanism::PolicyLaplace, &params, 1, 5.0).unwrap();
            if seed == 0 {
                let hist = build_histogram(&db, &config, &policy_for(config.mechanism, &calibration, 1)).unwrap();
                assert!((hist.get("a") - calibration.gamma).abs() < 1e-12);
                assert!((calibration.gamma - 5.769).abs() < 1e-3);
            }
            let r = run_dpsu(&db, &config, &params).unwrap();
            hits += usize::from(r.released.contains("a"));
        }
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn lone_user_is_rarely_released() {
        let params = e10();
        let calibration = calibrate(Mechanism::PolicyLaplace, &params, 1, 5.0).unwrap();
        let analytic = 0.5 * (-params.epsilon * (calibration.rho - 1.0)).exp();
        assert!((analytic - 4.5e-5).abs() < 0.1e-5, "{analytic}");
        assert!(analytic <= params.delta);

        let db = Database::from_sets([("u", ["a"])]).unwrap();
        let config = MechanismConfig::new(Mechanism::PolicyLaplace, 1, 5.0, 0);
        let hist = build_histogram(&db, &config, &policy_for(config.mechanism, &calibration, 1)).unwrap();
        assert_eq!(hist.get("a"), 1.0);
        let spec = NoiseSpec::from_calibration(&calibration);
        let n = 1_000_000u64;
        let hits = (0..n)
            .filter(|&seed| release_set(&hist, &spec, calibration.rho, seed).contains("a"))
            .count() as f64;
        let expected = analytic * n as f64;
        assert!((hits - expected).abs() <= 4.0 * expected.sqrt(), "{hits} vs {expected}");
    }

    #[test]
    fn refusals() {
        let db = Database::from_sets([("u", ["a"])]).unwrap();
        let greedy = MechanismConfig::new(Mechanism::GreedyDemo, 1, 5.0, 0);
        assert!(matches!(run_dpsu(&db, &greedy, &e10()), Err(DpsuError::Refused(_))));
        let zero = MechanismConfig::new(Mechanism::PolicyLaplace, 0, 5.0, 0);
        assert!(matches!(run_dpsu(&db, &zero, &e10()), Err(DpsuError::InvalidParameter(_))));
        let two = MechanismConfig::new(Mechanism::PolicyLaplace, 1, 5.0, 0).with_passes(2);
        assert!(matches!(run_dpsu(&db, &two, &e10()), Err(DpsuError::Refused(_))));
        let r = run_dpsu(&db, &two.with_experimental(true), &e10()).unwrap();
        assert!(!r.private);
    }

    #[test]
    fn runs_are_deterministic() {
        let db = Database::from_sets((0..300).map(|i| {
            (format!("u{i}"), (0..(i % 7 + 1)).map(|j| format!("w{}", (i * j) % 23)).collect::<Vec<_>>())
        }))
        .unwrap();
        for m in Mechanism::PRIVATE {
            let config = MechanismConfig::new(m, 3, 2.0, 99);
            let a = run_dpsu(&db, &config, &e10()).unwrap();
            let b = run_dpsu(&db, &config, &e10()).unwrap();
            assert_eq!(a, b);
            assert!(a.released.iter().all(|u| db.item_union().contains(u)));
        }
    }
}
