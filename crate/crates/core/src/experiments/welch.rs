use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{DpsuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Two-sided Welch t-test for a difference in means.
///
/// With zero variance in both samples the test degenerates: equal means give
/// `p = 1`, different means `p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(DpsuError::invalid("the Welch test needs at least 2 values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            WelchTest { t: 0.0, df: na + nb - 2.0, p_value: 1.0 }
        } else {
            WelchTest { t: (ma - mb).signum() * f64::INFINITY, df: na + nb - 2.0, p_value: 0.0 }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| DpsuError::invalid(format!("t distribution: {e}")))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p_value })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = welch_t_test(&[3.0, 5.0, 4.0], &[3.0, 5.0, 4.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        let flat = welch_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(flat.p_value, 1.0);
    }

    #[test]
    fn separated_samples() {
        let r = welch_t_test(&[1.0, 1.0, 1.0], &[100.0, 100.0, 100.0]).unwrap();
        assert_eq!(r.p_value, 0.0);
        let r = welch_t_test(&[1.0, 1.1, 0.9], &[100.0, 100.1, 99.9]).unwrap();
        assert!(r.p_value < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn reference_value() {
        // a = 1..5, b = 3..7 plus spread: t = -2 / sqrt(2.5/5 + 2.5/5) = -2, df = 8
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        // two-sided P(|T_8| > 2) = 0.0805162...
        assert!((r.p_value - 0.08051623795726).abs() < 1e-9, "{}", r.p_value);
    }

    #[test]
    fn needs_two_values() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }
}
