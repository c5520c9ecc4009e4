//! Noise scales, release thresholds ρ and cutoffs Γ.

mod normal;

pub use normal::{normal_cdf, normal_pdf, normal_quantile, normal_quantile_upper, normal_sf};

use serde::{Deserialize, Serialize};

use crate::error::{DpsuError, Result};
use crate::model::{Mechanism, NoiseFamily, PrivacyParams};

/// Output of [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub noise_kind: NoiseFamily,
    /// λ for Laplace noise, σ for Gaussian noise.
    pub scale: f64,
    pub rho: f64,
    /// Γ = ρ + α · scale.
    pub gamma: f64,
    /// `true` when the 1/t (or 1/√t) leading term was used.
    pub tightened: bool,
}

/// 1 − (1 − δ)^{1/t} without cancellation.
fn tail_mass(delta: f64, t: usize) -> f64 {
    -(f64::ln_1p(-delta) / t as f64).exp_m1()
}

fn check_delta0(delta0: usize) -> Result<()> {
    if delta0 < 1 {
        return Err(DpsuError::invalid("delta0 must be at least 1"));
    }
    Ok(())
}

/// Laplace release threshold:
/// `max_{1≤t≤Δ0} lead(t) + (1/ε)·ln(1 / (2(1 − (1 − δ)^{1/t})))`
/// with `lead(t) = 1/t` when tightened and 1 otherwise.
pub fn laplace_threshold(params: &PrivacyParams, delta0: usize, tightened: bool) -> Result<f64> {
    params.validate()?;
    check_delta0(delta0)?;
    let lambda = 1.0 / params.epsilon;
    let mut rho = f64::NEG_INFINITY;
    for t in 1..=delta0 {
        let q = tail_mass(params.delta, t);
        if !(q > 0.0) {
            return Err(DpsuError::Calibration(format!(
                "delta = {:e} is too small: 1 - (1 - delta)^(1/{t}) underflows to zero",
                params.delta
            )));
        }
        let lead = if tightened { 1.0 / t as f64 } else { 1.0 };
        let term = lead + lambda * (-std::f64::consts::LN_2 - q.ln());
        rho = rho.max(term);
    }
    Ok(rho)
}

/// `F(σ) = Φ(1/(2σ) − εσ) − e^ε · Φ(−1/(2σ) − εσ)`; Gaussian noise with
/// standard deviation σ on a sensitivity-1 query is (ε, F(σ))-DP.
pub fn gaussian_privacy_curve(sigma: f64, epsilon: f64) -> f64 {
    let a = 0.5 / sigma;
    let b = epsilon * sigma;
    normal_cdf(a - b) - epsilon.exp() * normal_cdf(-a - b)
}

const SIGMA_MIN: f64 = 1.0 / (1u64 << 40) as f64;
const SIGMA_MAX: f64 = (1u64 << 40) as f64;

/// Smallest σ (to within a relative 1e-12) with `F(σ) ≤ δ/2`.
///
/// The returned value always satisfies the condition itself; it is the upper
/// end of the final bisection bracket.
pub fn gaussian_sigma(params: &PrivacyParams) -> Result<f64> {
    params.validate()?;
    let eps = params.epsilon;
    let target = params.delta / 2.0;
    let ok = |s: f64| gaussian_privacy_curve(s, eps) <= target;

    let (mut lo, mut hi);
    if ok(1.0) {
        hi = 1.0;
        lo = 0.5;
        while ok(lo) {
            hi = lo;
            lo /= 2.0;
            if lo < SIGMA_MIN {
                return Err(DpsuError::Calibration(format!(
                    "no sigma bracket above 2^-40 for epsilon = {eps}, delta = {:e}",
                    params.delta
                )));
            }
        }
    } else {
        lo = 1.0;
        hi = 2.0;
        while !ok(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > SIGMA_MAX {
                return Err(DpsuError::Calibration(format!(
                    "no sigma bracket below 2^40 for epsilon = {eps}, delta = {:e}",
                    params.delta
                )));
            }
        }
    }
    // invariant: F(lo) > δ/2 >= F(hi)
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Gaussian release threshold:
/// `max_{1≤t≤Δ0} lead(t) + σ·Φ⁻¹((1 − δ/2)^{1/t})`
/// with `lead(t) = 1/√t` when tightened and 1 otherwise.
pub fn gaussian_threshold(
    sigma: f64,
    params: &PrivacyParams,
    delta0: usize,
    tightened: bool,
) -> Result<f64> {
    params.validate()?;
    check_delta0(delta0)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(DpsuError::invalid(format!("sigma must be finite and > 0, got {sigma}")));
    }
    let mut rho = f64::NEG_INFINITY;
    for t in 1..=delta0 {
        // Φ⁻¹((1 − δ/2)^{1/t}) is the upper-tail quantile of 1 − (1 − δ/2)^{1/t}
        let q = tail_mass(params.delta / 2.0, t);
        if !(q > 0.0) {
            return Err(DpsuError::Calibration(format!(
                "delta = {:e} is too small: 1 - (1 - delta/2)^(1/{t}) underflows to zero",
                params.delta
            )));
        }
        let lead = if tightened { 1.0 / (t as f64).sqrt() } else { 1.0 };
        rho = rho.max(lead + sigma * normal_quantile_upper(q)?);
    }
    Ok(rho)
}

/// Noise scale, threshold and cutoff for `mechanism`.
///
/// Every private mechanism uses the tightened thresholds: count and weighted
/// updates put at most 1/t (ℓ1) or 1/√t (ℓ2) on each of t new items, exactly
/// like the descent policies.
pub fn calibrate(
    mechanism: Mechanism,
    params: &PrivacyParams,
    delta0: usize,
    alpha: f64,
) -> Result<CalibrationResult> {
    if mechanism == Mechanism::GreedyDemo {
        return Err(DpsuError::Refused(
            "greedy-demo has unbounded sensitivity and cannot be calibrated".into(),
        ));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(DpsuError::invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let tightened = true;
    let kind = mechanism.noise_family();
    let (scale, rho) = match kind {
        NoiseFamily::Laplace => (
            1.0 / params.epsilon,
            laplace_threshold(params, delta0, tightened)?,
        ),
        NoiseFamily::Gaussian => {
            let sigma = gaussian_sigma(params)?;
            (sigma, gaussian_threshold(sigma, params, delta0, tightened)?)
        }
    };
    Ok(CalibrationResult {
        noise_kind: kind,
        scale,
        rho,
        gamma: rho + alpha * scale,
        tightened,
    })
}
